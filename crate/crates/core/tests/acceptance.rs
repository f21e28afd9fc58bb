//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines
//! appear in order and the information-loss counter can be read last.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use byzrl::adversary::{AttackKind, AttackSpec};
use byzrl::harness::{build_offline_dataset, run_estimate, run_offline, EstimatorBlock, OfflineBlock};
use byzrl::mdp::{envs, exact_optimal, exact_policy_eval, sample_episode, Policy, TabularMDP, Transition};
use byzrl::offline::{coverage_diagnostics, AgentBatch, OfflineDataset};
use byzrl::online::{run_byzan_ucbvi, Aggregator, OnlineConfig};
use byzrl::par;
use byzrl::robust_stats::{info_loss_counters, max_interval_clique, Interval};
use byzrl::seed::{stream, StreamKind};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gapped_mdp(seed: u64, s: usize, a: usize, h: usize) -> TabularMDP {
    let mut rng = stream(seed, StreamKind::MdpSampling, 0);
    envs::random_gapped(s, a, h, &mut rng).unwrap()
}

// 1 -----------------------------------------------------------------------

fn brute_force_clique(intervals: &[Interval]) -> usize {
    let m = intervals.len();
    (1u32..(1 << m))
        .filter(|mask| {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (j, iv) in intervals.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    lo = lo.max(iv.lo);
                    hi = hi.min(iv.hi);
                }
            }
            lo <= hi
        })
        .map(u32::count_ones)
        .max()
        .unwrap_or(0) as usize
}

fn clique_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(1, StreamKind::Trial, 0);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=12);
        // coarse grid so shared and touching endpoints are common
        let intervals: Vec<Interval> = (0..m)
            .map(|_| {
                let a = rng.random_range(0..20) as f64;
                let b = a + rng.random_range(0..8) as f64;
                Interval::new(a, b)
            })
            .collect();
        let clique = max_interval_clique(&intervals, &vec![1; m]).unwrap();
        if clique.members.len() != brute_force_clique(&intervals) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 5.0,
        format!("{mismatches} mismatches / 1000, {secs:.2}s (< 5s)"),
    )
}

// 2 -----------------------------------------------------------------------

fn coverage_block() -> EstimatorBlock {
    EstimatorBlock {
        sigma: 1.0,
        alpha: 0.25,
        delta: 0.1,
        epsilon: 0.0,
        value_bounds: None,
        num_batches: 20,
        num_bad: 5,
        min_size: 1,
        max_size: 50,
        true_mean: 0.0,
        sample_sigma: None,
        trials: 500,
        attack: AttackSpec::new(AttackKind::FixedValue {
            value: 100.0,
            count: 50,
        }),
    }
}

fn estimator_coverage() -> Outcome {
    let start = Instant::now();
    let (_, summary) = run_estimate(&coverage_block(), 2).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        summary.coverage >= 0.88 && secs < 10.0,
        format!("coverage {:.3} (>= 0.88), {secs:.2}s (< 10s)", summary.coverage),
    )
}

// 3 -----------------------------------------------------------------------

fn equal_batch_rate() -> Outcome {
    let error_at = |n: usize| {
        let block = EstimatorBlock {
            num_batches: 16,
            num_bad: 4,
            min_size: n,
            max_size: n,
            trials: 200,
            attack: AttackSpec::new(AttackKind::FixedValue {
                value: 100.0,
                count: n as u64,
            }),
            ..coverage_block()
        };
        run_estimate(&block, 3).unwrap().1.median_abs_error
    };
    let (e25, e100) = (error_at(25), error_at(100));
    let ratio = e25 / e100;
    outcome(
        (1.7..=2.3).contains(&ratio),
        format!("median error n=25 {e25:.4}, n=100 {e100:.4}, ratio {ratio:.3} (in [1.7, 2.3])"),
    )
}

// 5 -----------------------------------------------------------------------

fn dp_vs_rollout() -> Outcome {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for i in 0..5u64 {
        let mut rng = stream(50 + i, StreamKind::MdpSampling, 0);
        let (s, a, h) = (
            rng.random_range(2..=5),
            rng.random_range(2..=3),
            rng.random_range(2..=4),
        );
        let mdp = envs::random(s, a, h, &mut rng).unwrap();
        let policy = Policy::from_fn(h, s, |_, _| rng.random_range(0..a));
        let (v, _) = exact_policy_eval(&mdp, &policy).unwrap();
        let n = 100_000;
        let returns: Vec<f64> = par::map_range(n, |e| {
            let mut r = stream(50 + i, StreamKind::Trial, e as u64);
            sample_episode(&mdp, &policy, &mut r).iter().map(|t| t.reward).sum()
        });
        let mean = returns.iter().sum::<f64>() / n as f64;
        let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let z = (mean - v.get(0, mdp.initial_state)).abs() / se;
        worst = worst.max(z);
        lines.push(format!("{z:.2}"));
    }
    outcome(
        worst <= 3.0,
        format!("|DP - rollout| / SE = [{}] (all <= 3)", lines.join(", ")),
    )
}

// 6 -----------------------------------------------------------------------

fn online_structural_bounds() -> Outcome {
    let attacks = [
        AttackSpec::default(),
        AttackSpec::new(AttackKind::FixedValue {
            value: 100.0,
            count: 50,
        }),
        AttackSpec::new(AttackKind::MeanShift { delta: -2.0 }).with_sync_spam(),
        AttackSpec::new(AttackKind::Amplify { factor: -3.0 }),
        AttackSpec::new(AttackKind::EmptyBatch).with_sync_spam(),
    ];
    let runs: Vec<(bool, u64, u64, u64)> = par::map_range(20, |i| {
        let seed = 600 + i as u64;
        let mdp = gapped_mdp(seed, 3, 2, 3);
        let config = OnlineConfig {
            num_agents: 6,
            true_bad: if i % 5 == 0 { 0 } else { 1 },
            alpha_param: 0.2,
            episodes: 300,
            delta: 0.1,
            seed,
            attack: attacks[i % attacks.len()],
            aggregator: Aggregator::WeightedClique,
        };
        let m = run_byzan_ucbvi(&mdp, &config).unwrap().metrics;
        (
            m.bounds_hold() && m.homogeneity_violations == 0,
            m.policy_switches,
            m.sync_episodes,
            m.sync_bound,
        )
    });
    let violations = runs.iter().filter(|r| !r.0).count();
    let max_sync = runs.iter().map(|r| r.2).max().unwrap();
    outcome(
        violations == 0,
        format!(
            "{violations} violations / 20 runs; max sync episodes {max_sync} (bound {})",
            runs[0].3
        ),
    )
}

// 7 -----------------------------------------------------------------------

fn online_sublinear_and_robust() -> Outcome {
    let start = Instant::now();
    let attack = AttackSpec::new(AttackKind::FixedValue {
        value: 100.0,
        count: 50,
    });
    let results: Vec<(f64, f64, f64, f64)> = par::map_range(20, |i| {
        let seed = 700 + i as u64;
        let mdp = gapped_mdp(seed, 4, 2, 3);
        let config = OnlineConfig {
            num_agents: 8,
            true_bad: 2,
            alpha_param: 0.25,
            episodes: 2000,
            delta: 0.05,
            seed,
            attack,
            aggregator: Aggregator::WeightedClique,
        };
        let run = run_byzan_ucbvi(&mdp, &config).unwrap();
        let s1 = mdp.initial_state;
        let min_bonus = run.server.bonus.get(0, s1, run.policy.action(0, s1));
        let robust = run.metrics;
        let naive = run_byzan_ucbvi(
            &mdp,
            &OnlineConfig {
                aggregator: Aggregator::PooledMean,
                ..config
            },
        )
        .unwrap()
        .metrics;
        (
            robust.regret_between(1, 1000),
            robust.regret_between(1001, 2000),
            naive.cumulative_regret,
            min_bonus,
        )
    });
    let secs = start.elapsed().as_secs_f64();
    let sublinear = results.iter().filter(|r| r.1 < r.0).count();
    let robust = results.iter().filter(|r| r.0 + r.1 <= 0.5 * r.2).count();
    let ratio = median(results.iter().map(|r| (r.0 + r.1) / r.2).collect());
    let min_bonus = results.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    outcome(
        sublinear >= 18 && robust >= 18 && secs < 120.0,
        format!(
            "(a) second half < first half on {sublinear}/20 (need 18); \
             (b) robust <= 0.5 naive on {robust}/20 (need 18), median ratio {ratio:.3}; \
             smallest final bonus of the deployed start action {min_bonus:.2} vs value cap 3; {secs:.1}s"
        ),
    )
}

// 8 -----------------------------------------------------------------------

fn optimism_and_pessimism() -> Outcome {
    let online: Vec<(usize, usize)> = par::map_range(20, |i| {
        let seed = 800 + i as u64;
        let mdp = gapped_mdp(seed, 4, 2, 3);
        let config = OnlineConfig {
            num_agents: 4,
            true_bad: 0,
            alpha_param: 0.0,
            episodes: 300,
            delta: 0.05,
            seed,
            attack: AttackSpec::default(),
            aggregator: Aggregator::WeightedClique,
        };
        let m = run_byzan_ucbvi(&mdp, &config).unwrap().metrics;
        let ok = m
            .per_episode
            .iter()
            .filter(|r| r.v_hat_s1 >= m.v_star_s1 - 1e-12)
            .count();
        (ok, m.per_episode.len())
    });
    let (ok, total) = online.iter().fold((0, 0), |acc, r| (acc.0 + r.0, acc.1 + r.1));
    let online_frac = ok as f64 / total as f64;

    let offline_ok = par::map_range(20, |i| {
        let seed = 850 + i as u64;
        let mdp = gapped_mdp(seed, 4, 2, 3);
        let block = clean_offline_block(200);
        let ds = build_offline_dataset(&mdp, &block, seed).unwrap();
        run_offline(&mdp, &block, &ds, seed).unwrap().pessimistic
    })
    .into_iter()
    .filter(|p| *p)
    .count();
    outcome(
        online_frac >= 0.95 && offline_ok >= 19,
        format!(
            "online optimistic in {:.1}% of {total} episodes; offline pessimistic on {offline_ok}/20 seeds",
            100.0 * online_frac
        ),
    )
}

// 9 -----------------------------------------------------------------------

/// Every good batch logs the comparator's deterministic path; batch `j`
/// repeats each step `counts[j]` times.
fn path_dataset(mdp: &TabularMDP, pi: &Policy, counts: &[usize], good: usize) -> OfflineDataset {
    let batches = counts
        .iter()
        .map(|&n| {
            let mut s = mdp.initial_state;
            let steps = (0..mdp.horizon)
                .map(|h| {
                    let a = pi.action(h, s);
                    let next_state = byzrl::mdp::argmax(mdp.transition_row(h, s, a));
                    let t = Transition {
                        step: h,
                        state: s,
                        action: a,
                        reward: 0.0,
                        next_state,
                    };
                    s = next_state;
                    vec![t; n]
                })
                .collect();
            AgentBatch { steps }
        })
        .collect();
    OfflineDataset {
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        horizon: mdp.horizon,
        batches,
        good_mask: Some((0..counts.len()).map(|j| j < good).collect()),
    }
}

fn diagnostics_formulas() -> Outcome {
    let mdp = envs::chain(4, 2, 3, 0.0).unwrap();
    let (_, _, pi) = exact_optimal(&mdp);
    let (m, alpha, l) = (8usize, 0.25, 10usize);
    let good = 6;

    let equal = coverage_diagnostics(&path_dataset(&mdp, &pi, &[5; 8], good), &mdp, &pi, alpha).unwrap();

    let mut counts = vec![1usize; m];
    counts[0] = l * m;
    let uneven = coverage_diagnostics(&path_dataset(&mdp, &pi, &counts, good), &mdp, &pi, alpha).unwrap();
    // closed form with cut1 = cut2 = 1 and sum of clipped counts = (1 - alpha) m
    let g = (1.0 - alpha) * m as f64;
    let (cut1, clipped_sum) = (1.0, g);
    let expected = (l as f64 * m as f64 + g - 1.0) / g * (g * cut1 / clipped_sum);
    let got = uneven.kappa_even.unwrap_or(f64::NAN);
    outcome(
        equal.kappa_even == Some(1.0) && (got - expected).abs() <= 1e-9,
        format!(
            "equal counts kappa_even {:?} (== 1); one large batch {got:.12} vs closed form {expected:.12}",
            equal.kappa_even
        ),
    )
}

// 10 ----------------------------------------------------------------------

fn clean_offline_block(size: usize) -> OfflineBlock {
    serde_json::from_value(serde_json::json!({
        "num_agents": 8, "num_bad": 0, "alpha": 0.0, "delta": 0.1, "size": size
    }))
    .unwrap()
}

fn offline_data_benefit() -> Outcome {
    let median_at = |k: usize| {
        median(par::map_range(20, |i| {
            let seed = 1000 + i as u64;
            let mdp = gapped_mdp(seed, 4, 2, 3);
            let block = clean_offline_block(k);
            let ds = build_offline_dataset(&mdp, &block, seed).unwrap();
            let s = run_offline(&mdp, &block, &ds, seed).unwrap();
            assert_eq!(s.p_g0, Some(0.0), "scenario must have full coverage");
            s.suboptimality
        }))
    };
    let (small, large) = (median_at(50), median_at(500));
    outcome(
        large <= small / 1.5,
        format!(
            "median suboptimality K_j=50 {small:.4}, K_j=500 {large:.4} (need <= {:.4})",
            small / 1.5
        ),
    )
}

// 11 ----------------------------------------------------------------------

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn cli_determinism() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let commands = [
        ("estimate", "estimate.json"),
        ("online", "online_small.json"),
        ("offline", "offline.json"),
        ("sweep", "sweep_alpha.json"),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for (cmd, file) in commands {
        let mut outputs = Vec::new();
        for (run, threads) in [(0, "1"), (1, "4")] {
            let out = tmp.path().join(format!("{cmd}_{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_byzrl"))
                .args([cmd, "--config"])
                .arg(configs.join(file))
                .arg("--out")
                .arg(&out)
                .args(["--seed", "5"])
                .env("RAYON_NUM_THREADS", threads)
                .status()
                .unwrap();
            if !status.success() {
                failures.push(format!("{cmd} exited with {status}"));
            }
            outputs.push(read_dir_bytes(&out));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            failures.push(format!("{cmd} outputs differ"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "estimate, online, offline, sweep byte-identical across reruns (1 vs 4 threads)".to_string()
        } else {
            failures.join("; ")
        },
    )
}

// 4 (read last) -------------------------------------------------------------

fn information_loss() -> Outcome {
    let (checks, violations) = info_loss_counters();
    outcome(
        violations == 0 && checks > 0,
        format!("{violations} violations over {checks} robust aggregations"),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(u32, &str, Check); 11] = [
        (1, "clique oracle equivalence", clique_oracle),
        (2, "estimator coverage", estimator_coverage),
        (3, "equal-batch rate", equal_batch_rate),
        (5, "DP vs rollout", dp_vs_rollout),
        (6, "online structural bounds", online_structural_bounds),
        (7, "online sublinearity and robustness", online_sublinear_and_robust),
        (8, "optimism / pessimism", optimism_and_pessimism),
        (9, "diagnostics formulas", diagnostics_formulas),
        (10, "offline data benefit", offline_data_benefit),
        (11, "CLI determinism", cli_determinism),
        (4, "information-loss invariant", information_loss),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        let o = check();
        println!(
            "{} [{id:>2}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
