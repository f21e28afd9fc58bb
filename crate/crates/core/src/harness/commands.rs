use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::adversary::{adversarial_report, corrupt_offline, ReportContext};
use crate::error::{Error, Result};
use crate::mdp::{exact_optimal, exact_policy_eval, occupancy, TabularMDP};
use crate::offline::{
    byzan_pevi, coverage_diagnostics, generate_offline_dataset, policy_behavior, suboptimality, uniform_behavior,
    OfflineDataset,
};
use crate::online::{run_byzan_ucbvi, sync_cap, OnlineConfig};
use crate::par;
use crate::robust_stats::{robust_mean, BatchSummary, EstimatorParams};
use crate::seed::{stream, StreamKind};

use super::config::{
    config_error, BehaviorSpec, ComparatorSpec, EstimatorBlock, ExperimentConfig, Mode, OfflineBlock, OnlineBlock,
    SweepAxis,
};

/// Reclassifies a parameter error found while building a run as a config error.
fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::InvalidArgument(msg) => config_error(path, msg),
        other => other,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn mdp_for(cfg: &ExperimentConfig, seed: u64) -> Result<TabularMDP> {
    let source = cfg
        .mdp
        .as_ref()
        .ok_or_else(|| config_error("mdp", "this mode needs an MDP source"))?;
    source.build(seed).map_err(at("mdp"))
}

fn check_mode(cfg: &ExperimentConfig, expected: Mode) -> Result<()> {
    if cfg.mode != expected {
        return Err(config_error(
            "mode",
            format!(
                "config declares {:?} but the {:?} command was invoked",
                cfg.mode, expected
            ),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- estimate

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub true_mean: f64,
    pub estimate: f64,
    pub error_bound: f64,
    pub covered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateSummary {
    pub seed: u64,
    pub trials: usize,
    pub coverage: f64,
    pub target: f64,
    pub median_abs_error: f64,
    pub degenerate_trials: usize,
}

fn estimator_params(block: &EstimatorBlock) -> Result<EstimatorParams> {
    let mut params = EstimatorParams::new(block.sigma, block.alpha, block.delta).epsilon(block.epsilon);
    if let Some((lo, hi)) = block.value_bounds {
        params = params.value_bounds(lo, hi);
    }
    params.validate().map_err(at("estimator"))?;
    block.attack.validate().map_err(at("estimator.attack"))?;
    Ok(params)
}

/// One Monte-Carlo trial: fresh batch sizes and Gaussian samples, with the
/// last `num_bad` batches replaced by the attack's reports.
pub fn estimate_trial(
    block: &EstimatorBlock,
    params: &EstimatorParams,
    seed: u64,
    trial: usize,
) -> Result<TrialRecord> {
    let mut rng = stream(seed, StreamKind::Trial, trial as u64);
    let noise = Normal::new(block.true_mean, block.sample_sigma.unwrap_or(block.sigma))
        .map_err(|e| config_error("estimator.sample_sigma", e.to_string()))?;
    let first_bad = block.num_batches - block.num_bad;
    let value_cap = block.value_bounds.map_or(1.0, |(_, hi)| hi);
    let summaries: Vec<BatchSummary> = (0..block.num_batches)
        .map(|j| {
            let n = rng.random_range(block.min_size..=block.max_size);
            let samples: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
            let honest = BatchSummary::from_samples(&samples);
            if j < first_bad {
                honest
            } else {
                let ctx = ReportContext {
                    step: 0,
                    state: 0,
                    action: 0,
                    honest,
                    value_cap,
                };
                adversarial_report(&block.attack, &ctx)
            }
        })
        .collect();
    let r = robust_mean(&summaries, params)?;
    Ok(TrialRecord {
        trial,
        true_mean: block.true_mean,
        estimate: r.estimate,
        error_bound: r.error_bound,
        covered: (r.estimate - block.true_mean).abs() <= r.error_bound,
    })
}

pub fn run_estimate(block: &EstimatorBlock, seed: u64) -> Result<(Vec<TrialRecord>, EstimateSummary)> {
    let params = estimator_params(block)?;
    let records = par::map_range(block.trials, |t| estimate_trial(block, &params, seed, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let covered = records.iter().filter(|r| r.covered).count();
    let mut errors: Vec<f64> = records.iter().map(|r| (r.estimate - r.true_mean).abs()).collect();
    errors.sort_by(f64::total_cmp);
    let summary = EstimateSummary {
        seed,
        trials: records.len(),
        coverage: covered as f64 / records.len() as f64,
        target: 1.0 - block.delta,
        median_abs_error: median_sorted(&errors),
        degenerate_trials: records.iter().filter(|r| !r.error_bound.is_finite()).count(),
    };
    Ok((records, summary))
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

pub fn cmd_estimate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    check_mode(cfg, Mode::Estimate)?;
    let block = cfg.require_estimator()?;
    fs::create_dir_all(out)?;
    for &seed in &cfg.seeds {
        let (records, summary) = run_estimate(block, seed)?;
        let mut w = csv::Writer::from_path(out.join(format!("estimate_seed{seed}.csv")))?;
        w.write_record(["trial", "true_mean", "estimate", "error_bound", "covered"])?;
        for r in &records {
            w.write_record([
                r.trial.to_string(),
                r.true_mean.to_string(),
                r.estimate.to_string(),
                r.error_bound.to_string(),
                r.covered.to_string(),
            ])?;
        }
        w.write_record([
            "coverage".to_string(),
            block.true_mean.to_string(),
            String::new(),
            String::new(),
            summary.coverage.to_string(),
        ])?;
        w.flush()?;
        write_json(&out.join(format!("estimate_seed{seed}_summary.json")), &summary)?;
        log::info!("estimate seed {seed}: coverage {:.3}", summary.coverage);
    }
    Ok(())
}

// ---------------------------------------------------------------- online

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OnlineSummary {
    pub seed: u64,
    pub episodes: usize,
    pub final_regret: f64,
    pub first_half_regret: f64,
    pub second_half_regret: f64,
    pub sync_episodes: u64,
    pub switches: u64,
    /// `m S A H floor(log2 K)`.
    pub switch_bound: u64,
    /// `m S A H floor(log2 K) + m`.
    pub sync_bound: u64,
    pub bound_holds: bool,
    pub homogeneity_violations: u64,
    pub scalar_messages: u64,
    pub sync_requests: u64,
    pub broadcast_scalars: u64,
    pub report_scalars: u64,
    pub v_star_s1: f64,
}

pub fn online_config(block: &OnlineBlock, seed: u64) -> Result<OnlineConfig> {
    let cfg = OnlineConfig {
        num_agents: block.num_agents,
        true_bad: block.true_bad,
        alpha_param: block.alpha_param,
        episodes: block.episodes,
        delta: block.delta,
        seed,
        attack: block.attack,
        aggregator: block.aggregator,
    };
    cfg.validate().map_err(at("online"))?;
    Ok(cfg)
}

pub fn run_online(
    mdp: &TabularMDP,
    block: &OnlineBlock,
    seed: u64,
) -> Result<(crate::online::RunMetrics, OnlineSummary)> {
    let config = online_config(block, seed)?;
    let run = run_byzan_ucbvi(mdp, &config)?;
    let m = run.metrics;
    let k = config.episodes;
    let switch_bound = config.num_agents as u64 * sync_cap(mdp, k);
    let summary = OnlineSummary {
        seed,
        episodes: k,
        final_regret: m.cumulative_regret,
        first_half_regret: m.regret_between(1, k / 2),
        second_half_regret: m.regret_between(k / 2 + 1, k),
        sync_episodes: m.sync_episodes,
        switches: m.policy_switches,
        switch_bound,
        sync_bound: m.sync_bound,
        bound_holds: m.bounds_hold() && m.policy_switches <= switch_bound.max(1) && m.homogeneity_violations == 0,
        homogeneity_violations: m.homogeneity_violations,
        scalar_messages: m.scalar_messages,
        sync_requests: m.sync_requests,
        broadcast_scalars: m.broadcast_scalars,
        report_scalars: m.report_scalars,
        v_star_s1: m.v_star_s1,
    };
    Ok((m, summary))
}

pub fn cmd_online(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    check_mode(cfg, Mode::Online)?;
    let block = cfg.require_online()?;
    fs::create_dir_all(out)?;
    for &seed in &cfg.seeds {
        let mdp = mdp_for(cfg, seed)?;
        let (metrics, summary) = run_online(&mdp, block, seed)?;
        let mut w = csv::Writer::from_path(out.join(format!("online_seed{seed}.csv")))?;
        for r in &metrics.per_episode {
            w.serialize(r)?;
        }
        w.flush()?;
        write_json(&out.join(format!("online_seed{seed}_summary.json")), &summary)?;
        log::info!(
            "online seed {seed}: regret {:.2}, {} syncs, {} switches",
            summary.final_regret,
            summary.sync_episodes,
            summary.switches
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- offline

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OfflineSummary {
    pub seed: u64,
    pub num_batches: usize,
    pub num_bad: usize,
    pub suboptimality: f64,
    pub v_hat_s1: f64,
    pub v_learned_s1: f64,
    pub v_comparator_s1: f64,
    /// `V^_1(s_1) <= V^learned_1(s_1)`.
    pub pessimistic: bool,
    pub p_g0: Option<f64>,
    pub kappa: Option<f64>,
    pub kappa_even: Option<f64>,
    /// Fraction of `(h, s, a)` with enough non-empty batches to aggregate.
    pub covered_fraction: f64,
    pub gamma_mean: f64,
    pub gamma_max: f64,
    /// `sum_h E_{d_h}[Gamma_h(s, comparator(s))]`.
    pub gamma_comparator: f64,
}

/// Draws good batches from the behaviour policy and replaces the last
/// `num_bad` with corrupted copies. Each batch uses its own stream.
pub fn build_offline_dataset(mdp: &TabularMDP, block: &OfflineBlock, seed: u64) -> Result<OfflineDataset> {
    block.attack.validate().map_err(at("offline.attack"))?;
    let sizes = block.batch_sizes()?;
    let behavior = match block.behavior {
        BehaviorSpec::Uniform => uniform_behavior(mdp.num_states, mdp.num_actions, mdp.horizon),
        BehaviorSpec::Comparator { explore } => {
            if !(0.0..=1.0).contains(&explore) {
                return Err(config_error("offline.behavior.explore", "must lie in [0, 1]"));
            }
            let (_, _, optimal) = exact_optimal(mdp);
            policy_behavior(mdp, &optimal, explore)?
        }
    };
    let first_bad = block.num_agents - block.num_bad;
    let batches = par::map_range(block.num_agents, |j| {
        let mut rng = stream(seed, StreamKind::Dataset, j as u64);
        let ds = generate_offline_dataset(mdp, std::slice::from_ref(&behavior), &sizes[j..=j], &mut rng)?;
        let batch = ds.batches.into_iter().next().expect("one batch requested");
        Ok(if j < first_bad {
            batch
        } else {
            corrupt_offline(&block.attack, &batch, mdp.num_states, mdp.num_actions)
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(OfflineDataset {
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        horizon: mdp.horizon,
        batches,
        good_mask: Some((0..block.num_agents).map(|j| j < first_bad).collect()),
    })
}

pub fn run_offline(
    mdp: &TabularMDP,
    block: &OfflineBlock,
    dataset: &OfflineDataset,
    seed: u64,
) -> Result<OfflineSummary> {
    if !(0.0..0.5).contains(&block.alpha) {
        return Err(config_error("offline.alpha", "must lie in [0, 0.5)"));
    }
    if !(block.delta > 0.0 && block.delta < 1.0) {
        return Err(config_error("offline.delta", "must lie in (0, 1)"));
    }
    let pevi = byzan_pevi(dataset, block.alpha, block.delta)?;
    let comparator = match block.comparator {
        ComparatorSpec::Optimal => exact_optimal(mdp).2,
        ComparatorSpec::Learned => pevi.policy.clone(),
    };
    let s1 = mdp.initial_state;
    let (v_learned, _) = exact_policy_eval(mdp, &pevi.policy)?;
    let (v_cmp, _) = exact_policy_eval(mdp, &comparator)?;
    let coverage = match dataset.good_mask {
        Some(_) => Some(coverage_diagnostics(dataset, mdp, &comparator, block.alpha)?),
        None => None,
    };
    let d = occupancy(mdp, &comparator)?;
    let gamma_comparator = (0..mdp.horizon)
        .map(|h| {
            (0..mdp.num_states)
                .map(|s| d[h][s] * pevi.bonus.get(h, s, comparator.action(h, s)))
                .sum::<f64>()
        })
        .sum();
    let gammas: Vec<f64> = (0..mdp.horizon)
        .flat_map(|h| (0..mdp.num_states).flat_map(move |s| (0..mdp.num_actions).map(move |a| (h, s, a))))
        .map(|(h, s, a)| pevi.bonus.get(h, s, a))
        .collect();
    let v_hat_s1 = pevi.v_hat.get(0, s1);
    Ok(OfflineSummary {
        seed,
        num_batches: dataset.num_batches(),
        num_bad: dataset
            .good_mask
            .as_ref()
            .map_or(0, |g| g.iter().filter(|x| !**x).count()),
        suboptimality: suboptimality(mdp, &pevi.policy, &comparator)?,
        v_hat_s1,
        v_learned_s1: v_learned.get(0, s1),
        v_comparator_s1: v_cmp.get(0, s1),
        pessimistic: v_hat_s1 <= v_learned.get(0, s1) + 1e-12,
        p_g0: coverage.as_ref().map(|c| c.p_g0),
        kappa: coverage.as_ref().and_then(|c| c.kappa),
        kappa_even: coverage.as_ref().and_then(|c| c.kappa_even),
        covered_fraction: pevi.covered.iter().filter(|c| **c).count() as f64 / pevi.covered.len() as f64,
        gamma_mean: gammas.iter().sum::<f64>() / gammas.len() as f64,
        gamma_max: gammas.iter().copied().fold(0.0, f64::max),
        gamma_comparator,
    })
}

fn offline_dataset_for(mdp: &TabularMDP, block: &OfflineBlock, seed: u64) -> Result<OfflineDataset> {
    match &block.dataset {
        Some(path) => {
            let ds = OfflineDataset::read_ndjson(path).map_err(at("offline.dataset"))?;
            if (ds.num_states, ds.num_actions, ds.horizon) != (mdp.num_states, mdp.num_actions, mdp.horizon) {
                return Err(config_error(
                    "offline.dataset",
                    "dataset dimensions do not match the MDP",
                ));
            }
            Ok(ds)
        }
        None => build_offline_dataset(mdp, block, seed),
    }
}

pub fn cmd_offline(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    check_mode(cfg, Mode::Offline)?;
    let block = cfg.require_offline()?;
    fs::create_dir_all(out)?;
    for &seed in &cfg.seeds {
        let mdp = mdp_for(cfg, seed)?;
        let dataset = offline_dataset_for(&mdp, block, seed)?;
        if block.dataset.is_none() {
            dataset.write_ndjson(out.join(format!("offline_seed{seed}_dataset.ndjson")))?;
        }
        let summary = run_offline(&mdp, block, &dataset, seed)?;
        write_json(&out.join(format!("offline_seed{seed}_summary.json")), &summary)?;
        log::info!("offline seed {seed}: suboptimality {:.4}", summary.suboptimality);
    }
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: Mode,
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    /// Cumulative regret online, suboptimality offline.
    pub loss: f64,
    pub sync_episodes: Option<u64>,
    pub switches: Option<u64>,
    pub scalar_messages: Option<u64>,
    pub bound_holds: Option<bool>,
    pub p_g0: Option<f64>,
    pub kappa_even: Option<f64>,
}

fn grid_count(value: f64, path: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
        Ok(value as usize)
    } else {
        Err(config_error(
            path,
            format!("grid value {value} is not a positive integer"),
        ))
    }
}

fn sweep_point(cfg: &ExperimentConfig, mode: Mode, axis: SweepAxis, value: f64, seed: u64) -> Result<SweepRow> {
    let mdp = mdp_for(cfg, seed)?;
    let mut row = SweepRow {
        mode,
        axis,
        value,
        seed,
        loss: 0.0,
        sync_episodes: None,
        switches: None,
        scalar_messages: None,
        bound_holds: None,
        p_g0: None,
        kappa_even: None,
    };
    match mode {
        Mode::Online => {
            let mut block = cfg.require_online()?.clone();
            match axis {
                SweepAxis::Alpha => block.alpha_param = value,
                SweepAxis::Episodes => block.episodes = grid_count(value, "sweep.grid")?,
                SweepAxis::BatchSize => return Err(config_error("sweep.axis", "K_j applies to offline sweeps")),
            }
            let (_, s) = run_online(&mdp, &block, seed)?;
            row.loss = s.final_regret;
            row.sync_episodes = Some(s.sync_episodes);
            row.switches = Some(s.switches);
            row.scalar_messages = Some(s.scalar_messages);
            row.bound_holds = Some(s.bound_holds);
        }
        Mode::Offline => {
            let mut block = cfg.require_offline()?.clone();
            match axis {
                SweepAxis::Alpha => block.alpha = value,
                SweepAxis::BatchSize => {
                    block.size = Some(grid_count(value, "sweep.grid")?);
                    block.sizes = None;
                    block.dataset = None;
                }
                SweepAxis::Episodes => return Err(config_error("sweep.axis", "K applies to online sweeps")),
            }
            let dataset = offline_dataset_for(&mdp, &block, seed)?;
            let s = run_offline(&mdp, &block, &dataset, seed)?;
            row.loss = s.suboptimality;
            row.p_g0 = s.p_g0;
            row.kappa_even = s.kappa_even;
        }
        other => return Err(config_error("sweep.mode", format!("cannot sweep over {other:?}"))),
    }
    Ok(row)
}

/// Runs every `(grid value, seed)` pair concurrently; rows come back in grid
/// order, then seed order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| config_error("sweep", "sweep mode needs a `sweep` block"))?;
    let points: Vec<(f64, u64)> = sweep
        .grid
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    par::map_slice(&points, |&(v, s)| sweep_point(cfg, sweep.mode, sweep.axis, v, s))
        .into_iter()
        .collect()
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    check_mode(cfg, Mode::Sweep)?;
    fs::create_dir_all(out)?;
    let rows = run_sweep(cfg)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&out.join("sweep_summary.json"), &rows)?;
    Ok(())
}

pub fn run_command(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    match cfg.mode {
        Mode::Estimate => cmd_estimate(cfg, out),
        Mode::Online => cmd_online(cfg, out),
        Mode::Offline => cmd_offline(cfg, out),
        Mode::Sweep => cmd_sweep(cfg, out),
    }
}
