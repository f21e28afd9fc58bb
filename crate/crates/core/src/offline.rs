//! Offline learning from a multi-batch dataset in which some batches may be
//! arbitrary: pessimistic value iteration with the weighted-clique estimator,
//! plus coverage diagnostics computed from ground-truth good batches.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{exact_policy_eval, occupancy, sample_index, Policy, QTable, TabularMDP, Transition, ValueTable};
use crate::online::{clamp_and_greedy, StepBackup};
use crate::par;
use crate::robust_stats::{bad_budget, robust_mean, BatchSummary, EstimatorParams};
use crate::stats::TransitionStats;

/// One data holder's log: `steps[h]` holds that batch's tuples at step `h`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentBatch {
    pub steps: Vec<Vec<Transition>>,
}

impl AgentBatch {
    /// Tuples per step (`K_j`); 0 for a batch with no steps.
    pub fn size(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub batches: Vec<AgentBatch>,
    /// Ground truth for diagnostics; the learner never reads it.
    pub good_mask: Option<Vec<bool>>,
}

impl OfflineDataset {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.horizon == 0 {
            return Err(invalid("dataset dimensions must be positive"));
        }
        if let Some(mask) = &self.good_mask {
            if mask.len() != self.batches.len() {
                return Err(Error::Shape(format!(
                    "good_mask has {} entries for {} batches",
                    mask.len(),
                    self.batches.len()
                )));
            }
        }
        for (j, batch) in self.batches.iter().enumerate() {
            if batch.steps.len() != self.horizon {
                return Err(Error::Shape(format!(
                    "batch {j} has {} steps, expected {}",
                    batch.steps.len(),
                    self.horizon
                )));
            }
            let k = batch.size();
            for (h, step) in batch.steps.iter().enumerate() {
                if step.len() != k {
                    return Err(Error::Shape(format!(
                        "batch {j} has {} tuples at step {h} but {k} at step 0",
                        step.len()
                    )));
                }
                for t in step {
                    if t.step != h
                        || t.state >= self.num_states
                        || t.next_state >= self.num_states
                        || t.action >= self.num_actions
                        || !(0.0..=1.0).contains(&t.reward)
                    {
                        return Err(Error::Shape(format!("batch {j}, step {h}: invalid tuple {t:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn batch_stats(&self) -> Vec<TransitionStats> {
        par::map_slice(&self.batches, |b| {
            TransitionStats::from_transitions(
                self.num_states,
                self.num_actions,
                self.horizon,
                b.steps.iter().flatten(),
            )
        })
    }

    /// Newline-delimited JSON: a header object, then one tagged tuple per line.
    pub fn write_ndjson(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let header = DatasetHeader {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            num_agents: self.batches.len(),
            good_mask: self.good_mask.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (agent, batch) in self.batches.iter().enumerate() {
            for (h, step) in batch.steps.iter().enumerate() {
                for t in step {
                    let rec = TaggedTransition {
                        agent,
                        h,
                        state: t.state,
                        action: t.action,
                        reward: t.reward,
                        next_state: t.next_state,
                    };
                    serde_json::to_writer(&mut out, &rec)?;
                    out.write_all(b"\n")?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_ndjson(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header: DatasetHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(invalid("dataset file is empty")),
        };
        let mut batches = vec![
            AgentBatch {
                steps: vec![Vec::new(); header.horizon]
            };
            header.num_agents
        ];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TaggedTransition = serde_json::from_str(&line)?;
            if rec.agent >= header.num_agents || rec.h >= header.horizon {
                return Err(Error::Shape(format!(
                    "record tagged agent={} h={} is out of range",
                    rec.agent, rec.h
                )));
            }
            batches[rec.agent].steps[rec.h].push(Transition {
                step: rec.h,
                state: rec.state,
                action: rec.action,
                reward: rec.reward,
                next_state: rec.next_state,
            });
        }
        let dataset = Self {
            num_states: header.num_states,
            num_actions: header.num_actions,
            horizon: header.horizon,
            batches,
            good_mask: header.good_mask,
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    num_agents: usize,
    good_mask: Option<Vec<bool>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaggedTransition {
    agent: usize,
    h: usize,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
}

/// Per-step sampling distributions `nu_h` over `(s, a)`, each laid out `s * A + a`.
pub type Behavior = Vec<Vec<f64>>;

pub fn uniform_behavior(num_states: usize, num_actions: usize, horizon: usize) -> Behavior {
    let cells = num_states * num_actions;
    vec![vec![1.0 / cells as f64; cells]; horizon]
}

/// Samples states from the policy's own occupancy and plays its action with
/// probability `1 - explore`, otherwise a uniformly random action.
pub fn policy_behavior(mdp: &TabularMDP, policy: &Policy, explore: f64) -> Result<Behavior> {
    let d = occupancy(mdp, policy)?;
    let na = mdp.num_actions;
    Ok(d.iter()
        .enumerate()
        .map(|(h, row)| {
            let mut nu = vec![0.0; mdp.num_states * na];
            for (s, &mass) in row.iter().enumerate() {
                for a in 0..na {
                    let p = if a == policy.action(h, s) { 1.0 - explore } else { 0.0 } + explore / na as f64;
                    nu[s * na + a] = mass * p;
                }
            }
            nu
        })
        .collect())
}

/// Draws `sizes[j]` tuples per step for batch `j` from `behaviors[j]`.
pub fn generate_offline_dataset(
    mdp: &TabularMDP,
    behaviors: &[Behavior],
    sizes: &[usize],
    rng: &mut impl Rng,
) -> Result<OfflineDataset> {
    if behaviors.len() != sizes.len() {
        return Err(invalid(format!(
            "{} behaviors for {} batch sizes",
            behaviors.len(),
            sizes.len()
        )));
    }
    let cells = mdp.num_states * mdp.num_actions;
    for (j, nu) in behaviors.iter().enumerate() {
        if nu.len() != mdp.horizon {
            return Err(Error::Shape(format!(
                "behavior {j} covers {} steps, expected {}",
                nu.len(),
                mdp.horizon
            )));
        }
        for (h, row) in nu.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != cells || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(invalid(format!(
                    "behavior {j} at step {h} is not a distribution over S x A"
                )));
            }
        }
    }
    let na = mdp.num_actions;
    let batches = behaviors
        .iter()
        .zip(sizes)
        .map(|(nu, &k)| AgentBatch {
            steps: (0..mdp.horizon)
                .map(|h| {
                    (0..k)
                        .map(|_| {
                            let cell = sample_index(&nu[h], rng);
                            let (s, a) = (cell / na, cell % na);
                            let next_state = sample_index(mdp.transition_row(h, s, a), rng);
                            let reward = if rng.random::<f64>() < mdp.mean_reward(h, s, a) {
                                1.0
                            } else {
                                0.0
                            };
                            Transition {
                                step: h,
                                state: s,
                                action: a,
                                reward,
                                next_state,
                            }
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(OfflineDataset {
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        horizon: mdp.horizon,
        batches,
        good_mask: None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeviOutput {
    pub policy: Policy,
    pub bonus: QTable,
    pub estimates: QTable,
    pub q_bar: QTable,
    pub q_hat: QTable,
    pub v_hat: ValueTable,
    /// Whether `(h, s, a)` had at least `2b + 1` non-empty batches.
    pub covered: Vec<bool>,
}

/// Pessimistic value iteration over robustly aggregated batch summaries.
pub fn byzan_pevi(dataset: &OfflineDataset, alpha: f64, delta: f64) -> Result<PeviOutput> {
    dataset.validate()?;
    if !(0.0..0.5).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [0, 0.5), got {alpha}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if alpha >= 1.0 / 3.0 {
        log::warn!("alpha {alpha} >= 1/3; the suboptimality guarantee does not apply");
    }
    let (ns, na, hz) = (dataset.num_states, dataset.num_actions, dataset.horizon);
    let m = dataset.num_batches();
    let required = 2 * bad_budget(alpha, m) + 1;
    let log_delta_prime = delta.ln() - ((hz * ns * na * m.max(1)) as f64).ln();
    let stats = dataset.batch_stats();

    let mut out = PeviOutput {
        policy: Policy::constant(hz, ns, 0),
        bonus: QTable::zeros(hz, ns, na),
        estimates: QTable::zeros(hz, ns, na),
        q_bar: QTable::zeros(hz, ns, na),
        q_hat: QTable::zeros(hz, ns, na),
        v_hat: ValueTable::zeros(hz, ns),
        covered: vec![false; hz * ns * na],
    };
    for h in (0..hz).rev() {
        let cap = (hz - h) as f64;
        let v_next = out.v_hat.row(h + 1).to_vec();
        let params = EstimatorParams::with_log_delta(cap, alpha, log_delta_prime);
        let cells: Vec<Result<(f64, f64, bool)>> = par::map_range(ns * na, |cell| {
            let (s, a) = (cell / na, cell % na);
            let reports: Vec<BatchSummary> = stats.iter().map(|st| st.summary(h, s, a, &v_next)).collect();
            let nonempty = reports.iter().filter(|r| r.count > 0).count();
            if nonempty >= required {
                let r = robust_mean(&reports, &params)?;
                Ok((r.estimate, r.error_bound, true))
            } else {
                Ok((0.0, cap, false))
            }
        });
        let mut estimates = Vec::with_capacity(ns * na);
        let mut bonus = Vec::with_capacity(ns * na);
        for (cell, res) in cells.into_iter().enumerate() {
            let (e, g, covered) = res?;
            estimates.push(e);
            bonus.push(g);
            out.covered[h * ns * na + cell] = covered;
        }
        let StepBackup {
            estimates,
            bonus,
            q_bar,
            q_hat,
            actions,
            values,
        } = clamp_and_greedy(estimates, bonus, false, cap, na);
        for s in 0..ns {
            for a in 0..na {
                let c = s * na + a;
                out.estimates.set(h, s, a, estimates[c]);
                out.bonus.set(h, s, a, bonus[c]);
                out.q_bar.set(h, s, a, q_bar[c]);
                out.q_hat.set(h, s, a, q_hat[c]);
            }
            out.policy.set(h, s, actions[s]);
            out.v_hat.set(h, s, values[s]);
        }
    }
    Ok(out)
}

/// Comparator-side coverage at one `(h, s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub h: usize,
    pub state: usize,
    /// Comparator action `pi~_h(s)`.
    pub action: usize,
    pub occupancy: f64,
    /// `N_h^j(s, pi~_h(s))` for each good batch, in batch order.
    pub good_counts: Vec<u64>,
    /// `(b+1)`-th largest good count.
    pub cut1: u64,
    /// `(2b+1)`-th largest good count.
    pub cut2: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Comparator mass on steps whose `(s, pi~(s))` lacks `2b+1` covering good batches.
    pub p_g0: f64,
    /// Density ratio of comparator occupancy to good-data frequency; `None`
    /// when no state is covered.
    pub kappa: Option<f64>,
    /// Unevenness of good coverage; `None` when no state is covered.
    pub kappa_even: Option<f64>,
    /// `C_h`: covered states in the comparator's support, per step.
    pub covered_states: Vec<Vec<usize>>,
    pub cells: Vec<CoverageCell>,
}

/// `rank`-th largest (1-based), or 0 when fewer than `rank` values exist.
fn kth_largest(values: &[u64], rank: usize) -> u64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.get(rank - 1).copied().unwrap_or(0)
}

/// Coverage quantities of the good batches along a comparator policy. Only
/// `(s, a, h)` counts of good batches enter; rewards never do.
pub fn coverage_diagnostics(
    dataset: &OfflineDataset,
    mdp: &TabularMDP,
    comparator: &Policy,
    alpha: f64,
) -> Result<CoverageReport> {
    dataset.validate()?;
    let mask = dataset
        .good_mask
        .as_ref()
        .ok_or_else(|| invalid("coverage diagnostics need the dataset's good_mask"))?;
    if (dataset.num_states, dataset.num_actions, dataset.horizon) != (mdp.num_states, mdp.num_actions, mdp.horizon) {
        return Err(Error::Shape("dataset and MDP dimensions differ".into()));
    }
    let d = occupancy(mdp, comparator)?;
    let m = dataset.num_batches();
    let b = bad_budget(alpha, m);
    let good: Vec<usize> = (0..m).filter(|&j| mask[j]).collect();
    let stats = dataset.batch_stats();
    let good_total: usize = good.iter().map(|&j| dataset.batches[j].size()).sum();

    let mut p_g0 = 0.0;
    let mut kappa: Option<f64> = None;
    let mut kappa_even: Option<f64> = None;
    let mut covered_states = vec![Vec::new(); mdp.horizon];
    let mut cells = Vec::with_capacity(mdp.horizon * mdp.num_states);
    for h in 0..mdp.horizon {
        for s in 0..mdp.num_states {
            let a = comparator.action(h, s);
            let counts: Vec<u64> = good.iter().map(|&j| stats[j].count(h, s, a)).collect();
            let cut1 = kth_largest(&counts, b + 1);
            let cut2 = kth_largest(&counts, 2 * b + 1);
            let mass = d[h][s];
            if cut2 == 0 {
                p_g0 += mass;
            } else if mass > 0.0 {
                covered_states[h].push(s);
                let total: u64 = counts.iter().sum();
                let freq = total as f64 / good_total as f64;
                let ratio = mass / freq;
                kappa = Some(kappa.map_or(ratio, |k| k.max(ratio)));
                let clipped: u64 = counts.iter().map(|&n| n.min(cut2)).sum();
                let even = (total as f64 / clipped as f64) * (good.len() as f64 * cut1 as f64 / clipped as f64);
                kappa_even = Some(kappa_even.map_or(even, |k| k.max(even)));
            }
            cells.push(CoverageCell {
                h,
                state: s,
                action: a,
                occupancy: mass,
                good_counts: counts,
                cut1,
                cut2,
            });
        }
    }
    Ok(CoverageReport {
        p_g0,
        kappa,
        kappa_even,
        covered_states,
        cells,
    })
}

/// `V^comparator_1(s_1) - V^learned_1(s_1)`.
pub fn suboptimality(mdp: &TabularMDP, learned: &Policy, comparator: &Policy) -> Result<f64> {
    let (v_learned, _) = exact_policy_eval(mdp, learned)?;
    let (v_cmp, _) = exact_policy_eval(mdp, comparator)?;
    Ok(v_cmp.get(0, mdp.initial_state) - v_learned.get(0, mdp.initial_state))
}
