//! Byzantine behaviour models used to exercise the aggregation defences.
//!
//! Online, a corrupted agent sees the same broadcasts as everyone else and
//! may replace each `(mean, count)` report it sends. Offline, a corrupted
//! data holder may replace its whole batch.

use serde::{Deserialize, Serialize};

use crate::mdp::Transition;
use crate::offline::AgentBatch;
use crate::robust_stats::BatchSummary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    NoAttack,
    FixedValue {
        value: f64,
        count: u64,
    },
    MeanShift {
        delta: f64,
    },
    Amplify {
        factor: f64,
    },
    EmptyBatch,
    PoisonAction {
        state: usize,
        action: usize,
        reward_level: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    /// Online only: request a sync every episode.
    #[serde(default)]
    pub sync_spam: bool,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self { kind, sync_spam: false }
    }

    pub fn with_sync_spam(mut self) -> Self {
        self.sync_spam = true;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        match self.kind {
            AttackKind::FixedValue { value, .. } if !value.is_finite() => {
                Err(crate::error::invalid("FixedValue value must be finite"))
            }
            AttackKind::MeanShift { delta } if !delta.is_finite() => {
                Err(crate::error::invalid("MeanShift delta must be finite"))
            }
            AttackKind::Amplify { factor } if !factor.is_finite() => {
                Err(crate::error::invalid("Amplify factor must be finite"))
            }
            AttackKind::PoisonAction { reward_level, .. } if !reward_level.is_finite() => {
                Err(crate::error::invalid("PoisonAction reward_level must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// What a corrupted online agent knows when it writes one report.
#[derive(Clone, Copy, Debug)]
pub struct ReportContext {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    /// What the agent would have sent had it been honest.
    pub honest: BatchSummary,
    /// Largest legitimate value at this step.
    pub value_cap: f64,
}

pub fn adversarial_report(spec: &AttackSpec, ctx: &ReportContext) -> BatchSummary {
    let honest = ctx.honest;
    match spec.kind {
        AttackKind::NoAttack => honest,
        AttackKind::FixedValue { value, count } => BatchSummary::new(value, count),
        AttackKind::MeanShift { delta } => BatchSummary::new(honest.mean + delta, honest.count),
        AttackKind::Amplify { factor } => BatchSummary::new(factor * honest.mean, honest.count),
        AttackKind::EmptyBatch => BatchSummary::empty(),
        AttackKind::PoisonAction {
            state,
            action,
            reward_level,
        } => {
            if ctx.state == state && ctx.action == action {
                BatchSummary::new(reward_level * ctx.value_cap, honest.count.max(1))
            } else {
                honest
            }
        }
    }
}

/// Rewrites one offline batch. The output keeps the container's shape
/// invariants: equal tuple counts across steps, in-range indices, rewards in
/// `[0, 1]`.
pub fn corrupt_offline(spec: &AttackSpec, batch: &AgentBatch, num_states: usize, num_actions: usize) -> AgentBatch {
    let clamp_state = |s: usize| s.min(num_states - 1);
    let clamp_action = |a: usize| a.min(num_actions - 1);
    let map_rewards = |f: &dyn Fn(f64) -> f64| AgentBatch {
        steps: batch
            .steps
            .iter()
            .map(|step| {
                step.iter()
                    .map(|t| Transition {
                        reward: f(t.reward).clamp(0.0, 1.0),
                        ..*t
                    })
                    .collect()
            })
            .collect(),
    };
    match spec.kind {
        AttackKind::NoAttack => batch.clone(),
        AttackKind::EmptyBatch => AgentBatch {
            steps: vec![Vec::new(); batch.steps.len()],
        },
        AttackKind::MeanShift { delta } => map_rewards(&|r| r + delta),
        AttackKind::Amplify { factor } => map_rewards(&|r| r * factor),
        AttackKind::FixedValue { value, count } => AgentBatch {
            steps: (0..batch.steps.len())
                .map(|h| {
                    vec![
                        Transition {
                            step: h,
                            state: 0,
                            action: 0,
                            reward: value.clamp(0.0, 1.0),
                            next_state: 0,
                        };
                        count as usize
                    ]
                })
                .collect(),
        },
        AttackKind::PoisonAction {
            state,
            action,
            reward_level,
        } => {
            let (s, a) = (clamp_state(state), clamp_action(action));
            AgentBatch {
                steps: batch
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(h, step)| {
                        vec![
                            Transition {
                                step: h,
                                state: s,
                                action: a,
                                reward: reward_level.clamp(0.0, 1.0),
                                next_state: s,
                            };
                            step.len()
                        ]
                    })
                    .collect(),
            }
        }
    }
}
