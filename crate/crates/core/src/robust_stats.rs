//! Robust mean estimation from batches of arbitrary, possibly untruthful sizes.
//!
//! The estimator works only from per-batch summaries `(mean, count)`:
//!
//! 1. clip every count to `n_cut`, the `(2b+1)`-th largest reported count,
//!    where `b = floor(alpha * m)` is the assumed number of corrupted batches;
//! 2. build a closed confidence interval around each batch mean whose radius
//!    shrinks with the clipped count (an empty batch gets the whole real line);
//! 3. keep the largest family of intervals sharing a common point;
//! 4. return the clipped-count weighted mean of that family together with a
//!    closed-form error certificate.
//!
//! When fewer than `2b+1` batches are non-empty (`n_cut = 0`) nothing can be
//! certified and the estimator returns 0 with the trivial bound `b - a` (or
//! `+inf` for unbounded data).

use std::f64::consts::LN_2;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One provider's report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub mean: f64,
    pub count: u64,
}

impl BatchSummary {
    pub fn new(mean: f64, count: u64) -> Self {
        Self { mean, count }
    }

    pub fn empty() -> Self {
        Self { mean: 0.0, count: 0 }
    }

    /// Mean and size of a raw batch; an empty batch has mean 0.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::empty();
        }
        let sum: f64 = samples.iter().sum();
        Self {
            mean: sum / samples.len() as f64,
            count: samples.len() as u64,
        }
    }
}

/// Estimator inputs. The confidence level is stored as `ln(delta)` because the
/// online learner works with levels far below `f64::MIN_POSITIVE`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorParams {
    pub sigma: f64,
    pub alpha: f64,
    log_delta: f64,
    pub epsilon: f64,
    pub value_bounds: Option<(f64, f64)>,
}

impl EstimatorParams {
    pub fn new(sigma: f64, alpha: f64, delta: f64) -> Self {
        Self {
            sigma,
            alpha,
            log_delta: delta.ln(),
            epsilon: 0.0,
            value_bounds: None,
        }
    }

    /// Same as [`EstimatorParams::new`] with the confidence level given as `ln(delta)`.
    pub fn with_log_delta(sigma: f64, alpha: f64, log_delta: f64) -> Self {
        Self {
            sigma,
            alpha,
            log_delta,
            epsilon: 0.0,
            value_bounds: None,
        }
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn value_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.value_bounds = Some((lo, hi));
        self
    }

    pub fn delta(&self) -> f64 {
        self.log_delta.exp()
    }

    pub fn log_delta(&self) -> f64 {
        self.log_delta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(invalid(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, 0.5), got {}", self.alpha)));
        }
        if self.log_delta.is_nan() || self.log_delta >= 0.0 {
            return Err(invalid(format!(
                "delta must lie in (0, 1), got ln(delta) = {}",
                self.log_delta
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(invalid(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if let Some((a, b)) = self.value_bounds {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(invalid(format!("value bounds must satisfy a <= b, got ({a}, {b})")));
            }
        }
        Ok(())
    }
}

/// Closed interval over the extended reals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_real_line(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustEstimate {
    pub estimate: f64,
    pub error_bound: f64,
    /// Surviving batch indices, ascending.
    pub clique: Vec<usize>,
    pub clip_threshold: u64,
    pub clipped_counts: Vec<u64>,
    /// Set when `n_cut = 0` and the trivial fallback fired.
    pub degenerate: bool,
    /// Sum of clipped counts over the clique.
    pub retained_weight: u64,
    /// Sum of clipped counts over all batches.
    pub total_weight: u64,
}

impl RobustEstimate {
    fn fallback(params: &EstimatorParams, m: usize) -> Self {
        let error_bound = match params.value_bounds {
            Some((a, b)) => b - a,
            None => f64::INFINITY,
        };
        Self {
            estimate: 0.0,
            error_bound,
            clique: Vec::new(),
            clip_threshold: 0,
            clipped_counts: vec![0; m],
            degenerate: true,
            retained_weight: 0,
            total_weight: 0,
        }
    }

    /// The clique keeps at least half of the clipped sample mass.
    pub fn satisfies_info_loss(&self) -> bool {
        self.degenerate || 2 * self.retained_weight as u128 >= self.total_weight as u128
    }
}

static INFO_LOSS_CHECKS: AtomicU64 = AtomicU64::new(0);
static INFO_LOSS_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Process-wide `(checks, violations)` of the retained-mass invariant, counted
/// over every non-degenerate [`robust_mean`] call.
pub fn info_loss_counters() -> (u64, u64) {
    (
        INFO_LOSS_CHECKS.load(Ordering::Relaxed),
        INFO_LOSS_VIOLATIONS.load(Ordering::Relaxed),
    )
}

/// Number of batches the estimator treats as corrupted: `floor(alpha * m)`.
pub fn bad_budget(alpha: f64, m: usize) -> usize {
    // absorb representation error such as 0.29 * 100 = 28.999999999999996
    (alpha * m as f64 + 1e-9).floor().max(0.0) as usize
}

/// The `(2b+1)`-th largest count with `b = floor(alpha * m)`, or the smallest
/// count when `2b+1 > m`.
pub fn clip_threshold(counts: &[u64], alpha: f64) -> Result<u64> {
    if counts.is_empty() {
        return Err(invalid("clip_threshold needs at least one count"));
    }
    if !(0.0..0.5).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [0, 0.5), got {alpha}")));
    }
    let rank = 2 * bad_budget(alpha, counts.len());
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sorted[rank.min(sorted.len() - 1)])
}

fn confidence_radius(sigma: f64, clipped_count: u64, m: usize, log_delta: f64) -> f64 {
    let log_term = ((2.0 * m as f64).ln() - log_delta).max(0.0);
    sigma / (clipped_count as f64).sqrt() * (2.0 * log_term).sqrt()
}

/// Confidence interval for one batch, widened by `epsilon` on both ends.
/// A batch with clipped count 0 gets the whole real line.
pub fn build_interval(summary: &BatchSummary, clipped_count: u64, params: &EstimatorParams, m: usize) -> Interval {
    if clipped_count == 0 {
        return Interval::REAL_LINE;
    }
    let r = confidence_radius(params.sigma, clipped_count, m, params.log_delta) + params.epsilon;
    Interval::new(summary.mean - r, summary.mean + r)
}

/// A largest family of intervals with a common point.
#[derive(Clone, Debug, PartialEq)]
pub struct Clique {
    /// Member indices, ascending.
    pub members: Vec<usize>,
    /// Leftmost point of the members' common intersection.
    pub stab_point: f64,
}

/// Maximum stabbing set by an endpoint sweep.
///
/// Ties in cardinality go to the larger weight sum, then to the smaller
/// witness. Intervals are closed, so touching endpoints intersect.
pub fn max_interval_clique(intervals: &[Interval], weights: &[u64]) -> Result<Clique> {
    if intervals.is_empty() {
        return Err(invalid("max_interval_clique needs at least one interval"));
    }
    if intervals.len() != weights.len() {
        return Err(invalid(format!(
            "{} intervals but {} weights",
            intervals.len(),
            weights.len()
        )));
    }
    if let Some(j) = intervals
        .iter()
        .position(|iv| iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi)
    {
        return Err(invalid(format!("interval {j} is malformed: {:?}", intervals[j])));
    }

    // (coordinate, is_end, index); starts sort before ends at equal coordinates
    let mut events: Vec<(f64, bool, usize)> = Vec::with_capacity(2 * intervals.len());
    for (j, iv) in intervals.iter().enumerate() {
        events.push((iv.lo, false, j));
        events.push((iv.hi, true, j));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut count = 0usize;
    let mut weight = 0u128;
    let mut best: Option<(usize, u128, f64)> = None;
    let mut i = 0;
    while i < events.len() {
        let x = events[i].0;
        let mut saw_start = false;
        while i < events.len() && events[i].0 == x && !events[i].1 {
            count += 1;
            weight += weights[events[i].2] as u128;
            saw_start = true;
            i += 1;
        }
        if saw_start {
            let improves = match best {
                None => true,
                Some((bc, bw, _)) => count > bc || (count == bc && weight > bw),
            };
            if improves {
                best = Some((count, weight, x));
            }
        }
        while i < events.len() && events[i].0 == x && events[i].1 {
            count -= 1;
            weight -= weights[events[i].2] as u128;
            i += 1;
        }
    }

    let (_, _, stab_point) = best.expect("at least one start event");
    let members = intervals
        .iter()
        .enumerate()
        .filter(|(_, iv)| iv.contains(stab_point) || iv.is_real_line())
        .map(|(j, _)| j)
        .collect();
    Ok(Clique { members, stab_point })
}

/// Robust mean of batch summaries with an error certificate.
///
/// With `b = floor(alpha * m)`, `N = sum of clipped counts`, `L(x) = sqrt(2 ln(x / delta))`:
///
/// ```text
/// error = 2 sigma L(2) / sqrt(N) + 8 b sqrt(n_cut) sigma L(2m) / N + 5 eps + eps
/// ```
///
/// The bound holds with probability at least `1 - 2 delta` when the clean
/// batches are sub-Gaussian with proxy `sigma` and perturbed by at most `eps`.
pub fn robust_mean(summaries: &[BatchSummary], params: &EstimatorParams) -> Result<RobustEstimate> {
    params.validate()?;
    if summaries.is_empty() {
        return Err(invalid("robust_mean needs at least one batch"));
    }
    if let Some(j) = summaries.iter().position(|s| s.count > 0 && !s.mean.is_finite()) {
        return Err(invalid(format!("batch {j} reports a non-finite mean")));
    }

    let m = summaries.len();
    let counts: Vec<u64> = summaries.iter().map(|s| s.count).collect();
    let n_cut = clip_threshold(&counts, params.alpha)?;
    if n_cut == 0 {
        return Ok(RobustEstimate::fallback(params, m));
    }

    let clipped: Vec<u64> = counts.iter().map(|&n| n.min(n_cut)).collect();
    let intervals: Vec<Interval> = summaries
        .iter()
        .zip(&clipped)
        .map(|(s, &n)| build_interval(s, n, params, m))
        .collect();
    let clique = max_interval_clique(&intervals, &clipped)?;

    let mut retained = 0u64;
    let mut weighted_sum = 0.0;
    for &j in &clique.members {
        retained += clipped[j];
        if clipped[j] > 0 {
            weighted_sum += clipped[j] as f64 * summaries[j].mean;
        }
    }
    let total: u64 = clipped.iter().sum();
    debug_assert!(
        retained > 0,
        "a clique always contains a non-empty batch when n_cut > 0"
    );
    let estimate = weighted_sum / retained as f64;

    let b = bad_budget(params.alpha, m) as f64;
    let sigma = params.sigma;
    let l_agg = (2.0 * (LN_2 - params.log_delta).max(0.0)).sqrt();
    let l_batch = (2.0 * ((2.0 * m as f64).ln() - params.log_delta).max(0.0)).sqrt();
    let total_f = total as f64;
    let error_bound = 2.0 * sigma * l_agg / total_f.sqrt()
        + 8.0 * b * (n_cut as f64).sqrt() * sigma * l_batch / total_f
        + 6.0 * params.epsilon;

    let out = RobustEstimate {
        estimate,
        error_bound,
        clique: clique.members,
        clip_threshold: n_cut,
        clipped_counts: clipped,
        degenerate: false,
        retained_weight: retained,
        total_weight: total,
    };
    INFO_LOSS_CHECKS.fetch_add(1, Ordering::Relaxed);
    if !out.satisfies_info_loss() {
        INFO_LOSS_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        log::warn!(
            "clique retained {} of {} clipped samples",
            out.retained_weight,
            out.total_weight
        );
    }
    Ok(out)
}

/// Summarises raw batches and delegates to [`robust_mean`].
pub fn weighted_clique_from_samples(batches: &[Vec<f64>], params: &EstimatorParams) -> Result<RobustEstimate> {
    let summaries: Vec<BatchSummary> = batches.iter().map(|b| BatchSummary::from_samples(b)).collect();
    robust_mean(&summaries, params)
}

/// Non-robust baseline: count-weighted mean of every report, no clipping and
/// no outlier removal. The bound is the clean-data term of the robust
/// certificate.
pub fn pooled_mean(summaries: &[BatchSummary], params: &EstimatorParams) -> Result<RobustEstimate> {
    params.validate()?;
    if summaries.is_empty() {
        return Err(invalid("pooled_mean needs at least one batch"));
    }
    let m = summaries.len();
    let total: u64 = summaries.iter().map(|s| s.count).sum();
    if total == 0 {
        return Ok(RobustEstimate::fallback(params, m));
    }
    let weighted_sum: f64 = summaries
        .iter()
        .filter(|s| s.count > 0)
        .map(|s| s.count as f64 * s.mean)
        .sum();
    let l_agg = (2.0 * (LN_2 - params.log_delta).max(0.0)).sqrt();
    Ok(RobustEstimate {
        estimate: weighted_sum / total as f64,
        error_bound: 2.0 * params.sigma * l_agg / (total as f64).sqrt() + 6.0 * params.epsilon,
        clique: (0..m).collect(),
        clip_threshold: summaries.iter().map(|s| s.count).max().unwrap_or(0),
        clipped_counts: summaries.iter().map(|s| s.count).collect(),
        degenerate: false,
        retained_weight: total,
        total_weight: total,
    })
}
