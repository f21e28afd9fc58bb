//! Finite-horizon tabular MDPs and exact dynamic-programming oracles.
//!
//! Steps are 0-based: `h = 0` is the first decision and `h = horizon - 1` the
//! last. Value tables carry one extra all-zero row at `h = horizon`, so the
//! value cap at step `h` is `horizon - h`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// `P_h(s' | s, a)` laid out `(h, s, a, s')` row-major.
    pub transitions: Vec<f64>,
    /// `E[R_h(s, a)]` laid out `(h, s, a)` row-major.
    pub mean_rewards: Vec<f64>,
    pub initial_state: usize,
}

/// One logged step `(h, s, a, r, s')`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Deterministic non-stationary policy `pi_h(s)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    pub horizon: usize,
    pub num_states: usize,
    /// Actions laid out `(h, s)` row-major.
    pub actions: Vec<usize>,
}

impl Policy {
    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Self {
            horizon,
            num_states,
            actions: vec![action; horizon * num_states],
        }
    }

    pub fn from_fn(horizon: usize, num_states: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut actions = Vec::with_capacity(horizon * num_states);
        for h in 0..horizon {
            for s in 0..num_states {
                actions.push(f(h, s));
            }
        }
        Self {
            horizon,
            num_states,
            actions,
        }
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn set(&mut self, h: usize, s: usize, a: usize) {
        self.actions[h * self.num_states + s] = a;
    }

    pub fn check_against(&self, mdp: &TabularMDP) -> Result<()> {
        if self.horizon != mdp.horizon
            || self.num_states != mdp.num_states
            || self.actions.len() != mdp.horizon * mdp.num_states
        {
            return Err(Error::Shape(format!(
                "policy covers H={} S={} ({} entries) but the MDP has H={} S={}",
                self.horizon,
                self.num_states,
                self.actions.len(),
                mdp.horizon,
                mdp.num_states
            )));
        }
        if let Some(i) = self.actions.iter().position(|&a| a >= mdp.num_actions) {
            return Err(invalid(format!(
                "policy action {} at (h={}, s={}) exceeds A={}",
                self.actions[i],
                i / self.num_states,
                i % self.num_states,
                mdp.num_actions
            )));
        }
        Ok(())
    }
}

/// `V_h(s)` for `h = 0..=horizon`; the last row is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub horizon: usize,
    pub num_states: usize,
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(horizon: usize, num_states: usize) -> Self {
        Self {
            horizon,
            num_states,
            values: vec![0.0; (horizon + 1) * num_states],
        }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.values[h * self.num_states + s]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, v: f64) {
        self.values[h * self.num_states + s] = v;
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.values[h * self.num_states..(h + 1) * self.num_states]
    }
}

/// `Q_h(s, a)` for `h = 0..=horizon`; the last row is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            values: vec![0.0; (horizon + 1) * num_states * num_actions],
        }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[(h * self.num_states + s) * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, a: usize, v: f64) {
        self.values[(h * self.num_states + s) * self.num_actions + a] = v;
    }

    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.num_states + s) * self.num_actions;
        &self.values[start..start + self.num_actions]
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

impl TabularMDP {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        mean_rewards: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        let mdp = Self {
            num_states,
            num_actions,
            horizon,
            transitions,
            mean_rewards,
            initial_state,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds an MDP from non-negative transition weights, normalising every
    /// row to sum to one. Rows of all zeros are rejected.
    pub fn from_weights(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        mut weights: Vec<f64>,
        mean_rewards: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        if weights.len() != horizon * num_states * num_actions * num_states {
            return Err(Error::Shape(format!(
                "expected {} transition weights, got {}",
                horizon * num_states * num_actions * num_states,
                weights.len()
            )));
        }
        for (row_idx, row) in weights.chunks_mut(num_states.max(1)).enumerate() {
            let total: f64 = row.iter().sum();
            if !(total > 0.0) || row.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                let (h, s, a) = unflatten(row_idx, num_states, num_actions);
                return Err(Error::Simplex {
                    h,
                    state: s,
                    action: a,
                    sum: total,
                });
            }
            row.iter_mut().for_each(|w| *w /= total);
        }
        Self::new(num_states, num_actions, horizon, weights, mean_rewards, initial_state)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a, h) = (self.num_states, self.num_actions, self.horizon);
        if s == 0 || a == 0 || h == 0 {
            return Err(invalid(format!("dimensions must be positive, got S={s} A={a} H={h}")));
        }
        if self.transitions.len() != h * s * a * s {
            return Err(Error::Shape(format!(
                "expected {} transition entries, got {}",
                h * s * a * s,
                self.transitions.len()
            )));
        }
        if self.mean_rewards.len() != h * s * a {
            return Err(Error::Shape(format!(
                "expected {} reward entries, got {}",
                h * s * a,
                self.mean_rewards.len()
            )));
        }
        for (row_idx, row) in self.transitions.chunks(s).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOLERANCE {
                let (hh, ss, aa) = unflatten(row_idx, s, a);
                return Err(Error::Simplex {
                    h: hh,
                    state: ss,
                    action: aa,
                    sum,
                });
            }
        }
        for (idx, &r) in self.mean_rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                let (hh, ss, aa) = unflatten(idx, s, a);
                return Err(Error::RewardRange {
                    h: hh,
                    state: ss,
                    action: aa,
                    value: r,
                });
            }
        }
        if self.initial_state >= s {
            return Err(invalid(format!(
                "initial state {} out of range for S={s}",
                self.initial_state
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = ((h * self.num_states + s) * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    #[inline]
    pub fn mean_reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.mean_rewards[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Largest attainable value from step `h` on.
    #[inline]
    pub fn value_cap(&self, h: usize) -> f64 {
        (self.horizon - h) as f64
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mdp: Self = serde_json::from_str(&text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn unflatten(idx: usize, s: usize, a: usize) -> (usize, usize, usize) {
    (idx / (s * a), (idx / a) % s, idx % a)
}

/// `(B_h f)(s, a) = E[R_h(s, a)] + sum_{s'} P_h(s' | s, a) f(s')`, laid out `(s, a)`.
pub fn bellman_apply(mdp: &TabularMDP, f: &[f64], h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(mdp.num_states * mdp.num_actions);
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let expected: f64 = mdp.transition_row(h, s, a).iter().zip(f).map(|(p, v)| p * v).sum();
            out.push(mdp.mean_reward(h, s, a) + expected);
        }
    }
    out
}

pub fn exact_policy_eval(mdp: &TabularMDP, policy: &Policy) -> Result<(ValueTable, QTable)> {
    policy.check_against(mdp)?;
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut v = ValueTable::zeros(hz, ns);
    let mut q = QTable::zeros(hz, ns, na);
    for h in (0..hz).rev() {
        let backed = bellman_apply(mdp, v.row(h + 1), h);
        for s in 0..ns {
            for a in 0..na {
                q.set(h, s, a, backed[s * na + a]);
            }
            v.set(h, s, q.get(h, s, policy.action(h, s)));
        }
    }
    Ok((v, q))
}

/// Backward induction; ties go to the smallest action index.
pub fn exact_optimal(mdp: &TabularMDP) -> (ValueTable, QTable, Policy) {
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut v = ValueTable::zeros(hz, ns);
    let mut q = QTable::zeros(hz, ns, na);
    let mut pi = Policy::constant(hz, ns, 0);
    for h in (0..hz).rev() {
        let backed = bellman_apply(mdp, v.row(h + 1), h);
        for s in 0..ns {
            let row = &backed[s * na..(s + 1) * na];
            for (a, &x) in row.iter().enumerate() {
                q.set(h, s, a, x);
            }
            let best = argmax(row);
            pi.set(h, s, best);
            v.set(h, s, row[best]);
        }
    }
    (v, q, pi)
}

/// One episode from the fixed initial state with Bernoulli rewards.
pub fn sample_episode(mdp: &TabularMDP, policy: &Policy, rng: &mut impl Rng) -> Vec<Transition> {
    let mut s = mdp.initial_state;
    let mut out = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let a = policy.action(h, s);
        let reward = if rng.random::<f64>() < mdp.mean_reward(h, s, a) {
            1.0
        } else {
            0.0
        };
        let next_state = sample_index(mdp.transition_row(h, s, a), rng);
        out.push(Transition {
            step: h,
            state: s,
            action: a,
            reward,
            next_state,
        });
        s = next_state;
    }
    out
}

/// State distribution `d_h(s)` under `policy`, rows `h = 0..horizon`.
pub fn occupancy(mdp: &TabularMDP, policy: &Policy) -> Result<Vec<Vec<f64>>> {
    policy.check_against(mdp)?;
    let ns = mdp.num_states;
    let mut rows = Vec::with_capacity(mdp.horizon);
    let mut d = vec![0.0; ns];
    d[mdp.initial_state] = 1.0;
    for h in 0..mdp.horizon {
        let mut next = vec![0.0; ns];
        for (s, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let row = mdp.transition_row(h, s, policy.action(h, s));
            for (n, p) in next.iter_mut().zip(row) {
                *n += mass * p;
            }
        }
        rows.push(std::mem::replace(&mut d, next));
    }
    Ok(rows)
}

/// Named toy environments.
pub mod envs {
    use super::*;

    /// A line of `len` states starting at the left end. Action 1 moves right
    /// (with probability `1 - slip`, else stays), action 0 moves left. Every
    /// other action index behaves like action 0. The right end pays 1, the
    /// left end pays a small lure of 0.05 for action 0.
    pub fn chain(len: usize, num_actions: usize, horizon: usize, slip: f64) -> Result<TabularMDP> {
        if len < 2 || num_actions < 2 {
            return Err(invalid("chain needs at least 2 states and 2 actions"));
        }
        if !(0.0..1.0).contains(&slip) {
            return Err(invalid(format!("slip must lie in [0, 1), got {slip}")));
        }
        let (ns, na) = (len, num_actions);
        let mut weights = vec![0.0; horizon * ns * na * ns];
        let mut rewards = vec![0.0; horizon * ns * na];
        for h in 0..horizon {
            for s in 0..ns {
                for a in 0..na {
                    let base = ((h * ns + s) * na + a) * ns;
                    let target = if a == 1 {
                        (s + 1).min(ns - 1)
                    } else {
                        s.saturating_sub(1)
                    };
                    weights[base + target] += 1.0 - slip;
                    weights[base + s] += slip;
                    let r = if s == ns - 1 {
                        1.0
                    } else if s == 0 && a != 1 {
                        0.05
                    } else {
                        0.0
                    };
                    rewards[(h * ns + s) * na + a] = r;
                }
            }
        }
        TabularMDP::from_weights(ns, na, horizon, weights, rewards, 0)
    }

    /// Two 2x2 rooms joined by a single doorway cell:
    ///
    /// ```text
    ///  0 1   . 5 6
    ///  2 3 - 4 7 8
    /// ```
    ///
    /// Actions are up, down, left, right; a move succeeds with probability
    /// `1 - slip` and otherwise leaves the agent in place. State 8 (far corner
    /// of the right room) pays 1 for every action. The episode starts in 0.
    pub fn two_room(horizon: usize, slip: f64) -> Result<TabularMDP> {
        if !(0.0..1.0).contains(&slip) {
            return Err(invalid(format!("slip must lie in [0, 1), got {slip}")));
        }
        // (col, row) per state; the doorway is state 4 at column 2
        const CELLS: [(i32, i32); 9] = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (3, 0), (4, 0), (3, 1), (4, 1)];
        const MOVES: [(i32, i32); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
        let ns = CELLS.len();
        let na = MOVES.len();
        let find = |c: (i32, i32)| CELLS.iter().position(|&x| x == c);
        let mut weights = vec![0.0; horizon * ns * na * ns];
        let mut rewards = vec![0.0; horizon * ns * na];
        for h in 0..horizon {
            for (s, &(x, y)) in CELLS.iter().enumerate() {
                for (a, &(dx, dy)) in MOVES.iter().enumerate() {
                    let base = ((h * ns + s) * na + a) * ns;
                    let target = find((x + dx, y + dy)).unwrap_or(s);
                    weights[base + target] += 1.0 - slip;
                    weights[base + s] += slip;
                    if s == ns - 1 {
                        rewards[(h * ns + s) * na + a] = 1.0;
                    }
                }
            }
        }
        TabularMDP::from_weights(ns, na, horizon, weights, rewards, 0)
    }

    /// Dirichlet(1) transition rows and uniform mean rewards.
    pub fn random(num_states: usize, num_actions: usize, horizon: usize, rng: &mut impl Rng) -> Result<TabularMDP> {
        let cells = horizon * num_states * num_actions;
        let weights: Vec<f64> = (0..cells * num_states)
            .map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-12)
            .collect();
        let rewards: Vec<f64> = (0..cells).map(|_| rng.random::<f64>()).collect();
        TabularMDP::from_weights(num_states, num_actions, horizon, weights, rewards, 0)
    }

    /// Random MDP whose actions are separated by a clear reward gap: one
    /// action per `(h, s)` is "good" with mean reward in `[0.7, 0.9]`, the
    /// rest lie in `[0.1, 0.3]`.
    pub fn random_gapped(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> Result<TabularMDP> {
        let mut mdp = random(num_states, num_actions, horizon, rng)?;
        for h in 0..horizon {
            for s in 0..num_states {
                let good = rng.random_range(0..num_actions);
                for a in 0..num_actions {
                    let base = if a == good { 0.7 } else { 0.1 };
                    mdp.mean_rewards[(h * num_states + s) * num_actions + a] = base + 0.2 * rng.random::<f64>();
                }
            }
        }
        mdp.validate()?;
        Ok(mdp)
    }
}
