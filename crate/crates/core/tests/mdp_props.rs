use byzrl::mdp::{bellman_apply, envs, exact_optimal, exact_policy_eval, occupancy, Policy};
use byzrl::seed::{stream, StreamKind};
use proptest::prelude::*;
use rand::Rng;

fn random_setup(seed: u64) -> (byzrl::mdp::TabularMDP, Policy) {
    let mut rng = stream(seed, StreamKind::MdpSampling, 0);
    let (s, a, h) = (
        rng.random_range(1..=5),
        rng.random_range(1..=3),
        rng.random_range(1..=4),
    );
    let mdp = envs::random(s, a, h, &mut rng).unwrap();
    let policy = Policy::from_fn(h, s, |_, _| rng.random_range(0..a));
    (mdp, policy)
}

proptest! {
    #[test]
    fn bellman_matches_direct_sum(seed in any::<u64>(), f_seed in any::<u64>()) {
        let (mdp, _) = random_setup(seed);
        let mut rng = stream(f_seed, StreamKind::Trial, 0);
        let f: Vec<f64> = (0..mdp.num_states).map(|_| rng.random_range(-2.0..2.0)).collect();
        for h in 0..mdp.horizon {
            let out = bellman_apply(&mdp, &f, h);
            for s in 0..mdp.num_states {
                for a in 0..mdp.num_actions {
                    let direct = mdp.mean_reward(h, s, a)
                        + mdp.transition_row(h, s, a).iter().zip(&f).map(|(p, v)| p * v).sum::<f64>();
                    prop_assert!((out[s * mdp.num_actions + a] - direct).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn occupancy_is_a_distribution_per_step(seed in any::<u64>()) {
        let (mdp, policy) = random_setup(seed);
        for row in occupancy(&mdp, &policy).unwrap() {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_dominates_every_policy(seed in any::<u64>()) {
        let (mdp, policy) = random_setup(seed);
        let (v_star, _, pi_star) = exact_optimal(&mdp);
        let (v_pi, _) = exact_policy_eval(&mdp, &policy).unwrap();
        let (v_opt, _) = exact_policy_eval(&mdp, &pi_star).unwrap();
        for h in 0..=mdp.horizon {
            for s in 0..mdp.num_states {
                prop_assert!(v_star.get(h, s) + 1e-12 >= v_pi.get(h, s));
                prop_assert!((v_star.get(h, s) - v_opt.get(h, s)).abs() < 1e-12);
                prop_assert!(v_star.get(h, s) <= mdp.value_cap(h) + 1e-12);
            }
        }
    }

    /// Expected return equals the reward collected under the occupancy measure.
    #[test]
    fn value_equals_occupancy_weighted_reward(seed in any::<u64>()) {
        let (mdp, policy) = random_setup(seed);
        let d = occupancy(&mdp, &policy).unwrap();
        let (v, _) = exact_policy_eval(&mdp, &policy).unwrap();
        let via_d: f64 = (0..mdp.horizon)
            .map(|h| (0..mdp.num_states).map(|s| d[h][s] * mdp.mean_reward(h, s, policy.action(h, s))).sum::<f64>())
            .sum();
        prop_assert!((v.get(0, mdp.initial_state) - via_d).abs() < 1e-10);
    }
}
