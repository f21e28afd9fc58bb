//! Per-(h, s, a) sufficient statistics of logged transitions.
//!
//! Storing the visit count, reward sum, and next-state histogram is enough to
//! recompute `mean(r + V(s'))` exactly for any value table `V`, which is all
//! the aggregation step ever asks of a data holder.

use crate::mdp::Transition;
use crate::robust_stats::BatchSummary;

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionStats {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    counts: Vec<u64>,
    reward_sums: Vec<f64>,
    next_counts: Vec<u64>,
}

impl TransitionStats {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let cells = horizon * num_states * num_actions;
        Self {
            num_states,
            num_actions,
            horizon,
            counts: vec![0; cells],
            reward_sums: vec![0.0; cells],
            next_counts: vec![0; cells * num_states],
        }
    }

    pub fn from_transitions<'a>(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: impl IntoIterator<Item = &'a Transition>,
    ) -> Self {
        let mut stats = Self::new(num_states, num_actions, horizon);
        for t in transitions {
            stats.record(t);
        }
        stats
    }

    #[inline]
    fn cell(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    pub fn record(&mut self, t: &Transition) {
        let c = self.cell(t.step, t.state, t.action);
        self.counts[c] += 1;
        self.reward_sums[c] += t.reward;
        self.next_counts[c * self.num_states + t.next_state] += 1;
    }

    pub fn count(&self, h: usize, s: usize, a: usize) -> u64 {
        self.counts[self.cell(h, s, a)]
    }

    pub fn reward_sum(&self, h: usize, s: usize, a: usize) -> f64 {
        self.reward_sums[self.cell(h, s, a)]
    }

    pub fn next_state_counts(&self, h: usize, s: usize, a: usize) -> &[u64] {
        let c = self.cell(h, s, a) * self.num_states;
        &self.next_counts[c..c + self.num_states]
    }

    /// All visit counts, laid out `(h, s, a)` row-major.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `(mean of r + V(s'), N)` at `(h, s, a)`; the mean is 0 when `N = 0`.
    pub fn summary(&self, h: usize, s: usize, a: usize, next_values: &[f64]) -> BatchSummary {
        let c = self.cell(h, s, a);
        let n = self.counts[c];
        if n == 0 {
            return BatchSummary::empty();
        }
        let continuation: f64 = self
            .next_state_counts(h, s, a)
            .iter()
            .zip(next_values)
            .filter(|(&k, _)| k > 0)
            .map(|(&k, &v)| k as f64 * v)
            .sum();
        BatchSummary::new((self.reward_sums[c] + continuation) / n as f64, n)
    }
}
