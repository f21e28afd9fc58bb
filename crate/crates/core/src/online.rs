//! Distributed online learning with Byzantine agents: a server runs robust
//! optimistic value iteration over per-agent summary statistics and agents
//! request a re-plan only when one of their own visit counts doubles.
//!
//! Protocol per episode:
//! 1. the server collects sync flags; a flagged agent whose sync counter is
//!    still within `S A H floor(log2 K)` is granted and triggers a sync;
//! 2. on a sync, for `h = H-1 .. 0`, the server broadcasts `V_{h+1}`, every
//!    agent answers `(mean of r + V_{h+1}(s'), N)` for each `(s, a)`, and the
//!    server aggregates with the weighted-clique estimator to get an estimate
//!    and a bonus, then sets `Q = clamp(estimate + bonus, 0, H - h)`;
//! 3. every agent runs the shared greedy policy for one episode and raises its
//!    flag if any of its counts at least doubled since the last sync.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{adversarial_report, AttackSpec, ReportContext};
use crate::error::{invalid, Result};
use crate::mdp::{argmax, exact_optimal, exact_policy_eval, sample_episode, Policy, QTable, TabularMDP, ValueTable};
use crate::par;
use crate::robust_stats::{pooled_mean, robust_mean, BatchSummary, EstimatorParams, RobustEstimate};
use crate::seed::{stream, StreamKind};
use crate::stats::TransitionStats;

/// How the server turns per-agent reports into an estimate and a bonus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    WeightedClique,
    /// Non-robust baseline: count-weighted mean of all reports.
    PooledMean,
}

impl Aggregator {
    pub fn aggregate(&self, reports: &[BatchSummary], params: &EstimatorParams) -> Result<RobustEstimate> {
        match self {
            Aggregator::WeightedClique => robust_mean(reports, params),
            Aggregator::PooledMean => pooled_mean(reports, params),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub num_agents: usize,
    /// Number of agents that actually misbehave; they are the last indices.
    pub true_bad: usize,
    /// Corrupted fraction assumed by the estimator.
    pub alpha_param: f64,
    pub episodes: usize,
    pub delta: f64,
    pub seed: u64,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub aggregator: Aggregator,
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(invalid("num_agents must be positive"));
        }
        if self.true_bad >= self.num_agents {
            return Err(invalid(format!(
                "true_bad ({}) must be smaller than num_agents ({})",
                self.true_bad, self.num_agents
            )));
        }
        if !(0.0..0.5).contains(&self.alpha_param) {
            return Err(invalid(format!(
                "alpha_param must lie in [0, 0.5), got {}",
                self.alpha_param
            )));
        }
        if self.episodes == 0 {
            return Err(invalid("episodes must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        self.attack.validate()?;
        let limit = (1.0 - 1.0 / self.num_agents as f64) / 3.0;
        if self.alpha_param > limit {
            log::warn!(
                "alpha_param {} exceeds (1 - 1/m)/3 = {limit:.4}; the regret guarantee does not apply",
                self.alpha_param
            );
        }
        Ok(())
    }

    pub fn num_good(&self) -> usize {
        self.num_agents - self.true_bad
    }
}

/// `S A H floor(log2 K)`: per-agent cap on granted sync requests.
pub fn sync_cap(mdp: &TabularMDP, episodes: usize) -> u64 {
    (mdp.num_states * mdp.num_actions * mdp.horizon) as u64 * episodes.ilog2() as u64
}

/// Upper bound on sync episodes: `m S A H floor(log2 K) + m`.
pub fn sync_episode_bound(mdp: &TabularMDP, num_agents: usize, episodes: usize) -> u64 {
    num_agents as u64 * sync_cap(mdp, episodes) + num_agents as u64
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub stats: TransitionStats,
    pub old_counts: Vec<u64>,
    pub sync_flag: bool,
    pub byzantine: bool,
    /// Version tag of the policy run in the latest episode.
    pub last_policy_version: u64,
    rng: ChaCha8Rng,
}

impl AgentState {
    fn new(mdp: &TabularMDP, byzantine: bool, rng: ChaCha8Rng) -> Self {
        let cells = mdp.horizon * mdp.num_states * mdp.num_actions;
        Self {
            stats: TransitionStats::new(mdp.num_states, mdp.num_actions, mdp.horizon),
            old_counts: vec![0; cells],
            sync_flag: true,
            byzantine,
            last_policy_version: 0,
            rng,
        }
    }

    /// Some count at least doubled since the snapshot; a first visit counts.
    pub fn counts_doubled(&self) -> bool {
        self.stats
            .counts()
            .iter()
            .zip(&self.old_counts)
            .any(|(&n, &old)| n > 0 && n >= 2 * old)
    }

    fn snapshot(&mut self) {
        self.old_counts.copy_from_slice(self.stats.counts());
    }
}

#[derive(Clone, Debug)]
pub struct ServerState {
    pub v_hat: ValueTable,
    pub q_bar: QTable,
    pub q_hat: QTable,
    pub bonus: QTable,
    pub policy: Policy,
    /// Bumped whenever a sync deploys a policy different from the last one.
    pub policy_version: u64,
    pub sync_count: Vec<i64>,
    pub episode: usize,
    /// `ln(delta')` with `delta' = delta / (S A H K m)^(3S)`.
    pub log_delta_prime: f64,
    /// Perturbation allowance `1 / (S A H K m)`.
    pub eps_cover: f64,
}

impl ServerState {
    pub fn new(mdp: &TabularMDP, config: &OnlineConfig) -> Self {
        let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
        let sahkm = (ns * na * hz) as f64 * config.episodes as f64 * config.num_agents as f64;
        Self {
            v_hat: ValueTable::zeros(hz, ns),
            q_bar: QTable::zeros(hz, ns, na),
            q_hat: QTable::zeros(hz, ns, na),
            bonus: QTable::zeros(hz, ns, na),
            policy: Policy::constant(hz, ns, 0),
            policy_version: 0,
            sync_count: vec![-1; config.num_agents],
            episode: 0,
            log_delta_prime: config.delta.ln() - 3.0 * ns as f64 * sahkm.ln(),
            eps_cover: 1.0 / sahkm,
        }
    }

    /// Estimator settings for step `h` (0-based): `sigma = H - h`, values in `[0, H - h]`.
    pub fn step_params(&self, mdp: &TabularMDP, h: usize, alpha: f64) -> EstimatorParams {
        let cap = mdp.value_cap(h);
        EstimatorParams::with_log_delta(cap, alpha, self.log_delta_prime)
            .epsilon(self.eps_cover)
            .value_bounds(0.0, cap)
    }
}

/// Result of one optimistic backup at a single step, laid out `(s, a)` / `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBackup {
    pub estimates: Vec<f64>,
    pub bonus: Vec<f64>,
    pub q_bar: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub actions: Vec<usize>,
    pub values: Vec<f64>,
}

/// Clamps `center +/- bonus` into `[0, cap]` and acts greedily.
pub(crate) fn clamp_and_greedy(
    estimates: Vec<f64>,
    bonus: Vec<f64>,
    optimistic: bool,
    cap: f64,
    num_actions: usize,
) -> StepBackup {
    let q_bar: Vec<f64> = estimates
        .iter()
        .zip(&bonus)
        .map(|(e, g)| if optimistic { e + g } else { e - g })
        .collect();
    let q_hat: Vec<f64> = q_bar.iter().map(|q| q.min(cap).max(0.0)).collect();
    let mut actions = Vec::with_capacity(q_hat.len() / num_actions);
    let mut values = Vec::with_capacity(q_hat.len() / num_actions);
    for row in q_hat.chunks(num_actions) {
        let a = argmax(row);
        actions.push(a);
        values.push(row[a]);
    }
    StepBackup {
        estimates,
        bonus,
        q_bar,
        q_hat,
        actions,
        values,
    }
}

/// Optimistic backup at one step from per-`(s, a)` report lists.
pub fn ucb_backup(
    reports: &[Vec<BatchSummary>],
    params: &EstimatorParams,
    aggregator: Aggregator,
    num_actions: usize,
) -> Result<StepBackup> {
    let results = par::map_slice(reports, |r| aggregator.aggregate(r, params));
    let mut estimates = Vec::with_capacity(reports.len());
    let mut bonus = Vec::with_capacity(reports.len());
    for r in results {
        let r = r?;
        estimates.push(r.estimate);
        bonus.push(r.error_bound);
    }
    let cap = params.value_bounds.map(|(_, b)| b).unwrap_or(f64::INFINITY);
    Ok(clamp_and_greedy(estimates, bonus, true, cap, num_actions))
}

/// Events that cost scalar messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageEvent {
    SyncRequests {
        agents: usize,
    },
    ValueBroadcast {
        agents: usize,
        states: usize,
    },
    Reports {
        agents: usize,
        states: usize,
        actions: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub synced: bool,
    pub messages: u64,
    /// Server's optimistic value at the initial state for the deployed policy.
    pub v_hat_s1: f64,
    /// True value of the deployed policy at the initial state.
    pub v_pi_s1: f64,
    pub policy_version: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_episode: Vec<EpisodeRecord>,
    pub cumulative_regret: f64,
    pub sync_episodes: u64,
    pub policy_switches: u64,
    pub scalar_messages: u64,
    pub sync_requests: u64,
    pub broadcast_scalars: u64,
    pub report_scalars: u64,
    pub sync_bound: u64,
    pub homogeneity_violations: u64,
    pub v_star_s1: f64,
    /// Wall-clock seconds of each sync's backups; never serialized so outputs
    /// stay reproducible.
    #[serde(skip)]
    pub backup_seconds: Vec<f64>,
}

impl RunMetrics {
    pub fn account(&mut self, event: MessageEvent) -> u64 {
        let n = match event {
            MessageEvent::SyncRequests { agents } => {
                self.sync_requests += agents as u64;
                agents as u64
            }
            MessageEvent::ValueBroadcast { agents, states } => {
                let n = (agents * states) as u64;
                self.broadcast_scalars += n;
                n
            }
            MessageEvent::Reports {
                agents,
                states,
                actions,
            } => {
                let n = (2 * agents * states * actions) as u64;
                self.report_scalars += n;
                n
            }
        };
        self.scalar_messages += n;
        n
    }

    /// `policy_switches <= sync_episodes <= m S A H floor(log2 K) + m`.
    pub fn bounds_hold(&self) -> bool {
        self.policy_switches <= self.sync_episodes && self.sync_episodes <= self.sync_bound
    }

    pub fn regret_between(&self, first_k: usize, last_k: usize) -> f64 {
        self.per_episode
            .iter()
            .filter(|r| r.k >= first_k && r.k <= last_k)
            .map(|r| r.inst_regret)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct OnlineRun {
    pub policy: Policy,
    pub metrics: RunMetrics,
    pub server: ServerState,
}

fn synchronize(
    mdp: &TabularMDP,
    config: &OnlineConfig,
    server: &mut ServerState,
    agents: &mut [AgentState],
    metrics: &mut RunMetrics,
) -> Result<u64> {
    let (ns, na, hz, m) = (mdp.num_states, mdp.num_actions, mdp.horizon, config.num_agents);
    for agent in agents.iter_mut() {
        agent.snapshot();
    }
    let started = Instant::now();
    let mut messages = 0;
    let mut new_policy = server.policy.clone();
    for h in (0..hz).rev() {
        messages += metrics.account(MessageEvent::ValueBroadcast { agents: m, states: ns });
        let v_next = server.v_hat.row(h + 1).to_vec();
        let cap = mdp.value_cap(h);
        let agents_ref: &[AgentState] = agents;
        let reports: Vec<Vec<BatchSummary>> = par::map_range(ns * na, |cell| {
            let (s, a) = (cell / na, cell % na);
            agents_ref
                .iter()
                .map(|agent| {
                    let honest = agent.stats.summary(h, s, a, &v_next);
                    if agent.byzantine {
                        let ctx = ReportContext {
                            step: h,
                            state: s,
                            action: a,
                            honest,
                            value_cap: cap,
                        };
                        adversarial_report(&config.attack, &ctx)
                    } else {
                        honest
                    }
                })
                .collect()
        });
        messages += metrics.account(MessageEvent::Reports {
            agents: m,
            states: ns,
            actions: na,
        });
        let params = server.step_params(mdp, h, config.alpha_param);
        let step = ucb_backup(&reports, &params, config.aggregator, na)?;
        for s in 0..ns {
            for a in 0..na {
                let c = s * na + a;
                server.q_bar.set(h, s, a, step.q_bar[c]);
                server.q_hat.set(h, s, a, step.q_hat[c]);
                server.bonus.set(h, s, a, step.bonus[c]);
            }
            new_policy.set(h, s, step.actions[s]);
            server.v_hat.set(h, s, step.values[s]);
        }
    }
    metrics.backup_seconds.push(started.elapsed().as_secs_f64());
    if new_policy != server.policy || server.policy_version == 0 {
        server.policy = new_policy;
        server.policy_version += 1;
        metrics.policy_switches += 1;
    }
    Ok(messages)
}

/// Runs the full protocol for `config.episodes` episodes.
pub fn run_byzan_ucbvi(mdp: &TabularMDP, config: &OnlineConfig) -> Result<OnlineRun> {
    mdp.validate()?;
    config.validate()?;
    let m = config.num_agents;
    let n_good = config.num_good();
    let cap = sync_cap(mdp, config.episodes) as i64;

    let mut server = ServerState::new(mdp, config);
    let mut agents: Vec<AgentState> = (0..m)
        .map(|j| AgentState::new(mdp, j >= n_good, stream(config.seed, StreamKind::Agent, j as u64)))
        .collect();
    let (v_star, _, _) = exact_optimal(mdp);
    let v_star_s1 = v_star.get(0, mdp.initial_state);

    let mut metrics = RunMetrics {
        sync_bound: sync_episode_bound(mdp, m, config.episodes),
        v_star_s1,
        ..RunMetrics::default()
    };
    let mut deployed_value = f64::NAN;
    let mut deployed_version = u64::MAX;

    for k in 1..=config.episodes {
        server.episode = k;
        let requests = agents.iter().filter(|a| a.sync_flag).count();
        let mut messages = metrics.account(MessageEvent::SyncRequests { agents: requests });
        let mut synchronize_now = false;
        for (j, agent) in agents.iter().enumerate() {
            if agent.sync_flag && server.sync_count[j] <= cap {
                server.sync_count[j] += 1;
                synchronize_now = true;
            }
        }
        if synchronize_now {
            metrics.sync_episodes += 1;
            messages += synchronize(mdp, config, &mut server, &mut agents, &mut metrics)?;
        }

        if server.policy_version != deployed_version {
            let (v_pi, _) = exact_policy_eval(mdp, &server.policy)?;
            deployed_value = v_pi.get(0, mdp.initial_state);
            deployed_version = server.policy_version;
        }

        let policy = &server.policy;
        let version = server.policy_version;
        let spam = config.attack.sync_spam;
        par::for_each_mut(&mut agents, |_, agent| {
            let episode = sample_episode(mdp, policy, &mut agent.rng);
            for t in &episode {
                agent.stats.record(t);
            }
            agent.last_policy_version = version;
            agent.sync_flag = agent.counts_doubled() || (agent.byzantine && spam);
        });
        if agents[..n_good].iter().any(|a| a.last_policy_version != version) {
            metrics.homogeneity_violations += 1;
        }

        let inst_regret = n_good as f64 * (v_star_s1 - deployed_value);
        metrics.cumulative_regret += inst_regret;
        metrics.per_episode.push(EpisodeRecord {
            k,
            inst_regret,
            cum_regret: metrics.cumulative_regret,
            synced: synchronize_now,
            messages,
            v_hat_s1: server.v_hat.get(0, mdp.initial_state),
            v_pi_s1: deployed_value,
            policy_version: version,
        });
    }

    Ok(OnlineRun {
        policy: server.policy.clone(),
        metrics,
        server,
    })
}
