use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AttackSpec;
use crate::error::{Error, Result};
use crate::mdp::{envs, TabularMDP};
use crate::online::Aggregator;
use crate::seed::{stream, StreamKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Estimate,
    Online,
    Offline,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    Chain {
        len: usize,
        #[serde(default = "two")]
        num_actions: usize,
        horizon: usize,
        #[serde(default)]
        slip: f64,
    },
    TwoRoom {
        horizon: usize,
        #[serde(default)]
        slip: f64,
    },
    Random {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        /// Separate one good action per `(h, s)` by a reward gap.
        #[serde(default)]
        gapped: bool,
        /// Seed of the MDP itself; defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
    },
}

fn two() -> usize {
    2
}

impl MdpSource {
    pub fn build(&self, run_seed: u64) -> Result<TabularMDP> {
        match self {
            MdpSource::Chain {
                len,
                num_actions,
                horizon,
                slip,
            } => envs::chain(*len, *num_actions, *horizon, *slip),
            MdpSource::TwoRoom { horizon, slip } => envs::two_room(*horizon, *slip),
            MdpSource::Random {
                num_states,
                num_actions,
                horizon,
                gapped,
                seed,
            } => {
                let mut rng = stream(seed.unwrap_or(run_seed), StreamKind::MdpSampling, 0);
                if *gapped {
                    envs::random_gapped(*num_states, *num_actions, *horizon, &mut rng)
                } else {
                    envs::random(*num_states, *num_actions, *horizon, &mut rng)
                }
            }
            MdpSource::File { path } => TabularMDP::load(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    pub sigma: f64,
    pub alpha: f64,
    pub delta: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub value_bounds: Option<(f64, f64)>,
    pub num_batches: usize,
    #[serde(default)]
    pub num_bad: usize,
    #[serde(default = "one")]
    pub min_size: usize,
    pub max_size: usize,
    #[serde(default)]
    pub true_mean: f64,
    /// Standard deviation of the simulated clean samples; defaults to `sigma`.
    #[serde(default)]
    pub sample_sigma: Option<f64>,
    pub trials: usize,
    #[serde(default)]
    pub attack: AttackSpec,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineBlock {
    pub num_agents: usize,
    #[serde(default)]
    pub true_bad: usize,
    pub alpha_param: f64,
    pub episodes: usize,
    pub delta: f64,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub aggregator: Aggregator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSpec {
    #[default]
    Uniform,
    /// Comparator occupancy with `explore` mass spread over all actions.
    Comparator { explore: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorSpec {
    #[default]
    Optimal,
    /// Compare the learned policy against itself.
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineBlock {
    pub num_agents: usize,
    #[serde(default)]
    pub num_bad: usize,
    pub alpha: f64,
    pub delta: f64,
    /// Tuples per step for every batch, or per batch when `sizes` is given.
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub behavior: BehaviorSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub comparator: ComparatorSpec,
    /// Read this dataset instead of generating one.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
}

impl OfflineBlock {
    pub fn batch_sizes(&self) -> Result<Vec<usize>> {
        match (&self.sizes, self.size) {
            (Some(sizes), _) if sizes.len() == self.num_agents => Ok(sizes.clone()),
            (Some(sizes), _) => Err(config_error(
                "offline.sizes",
                format!("expected {} entries, got {}", self.num_agents, sizes.len()),
            )),
            (None, Some(k)) => Ok(vec![k; self.num_agents]),
            (None, None) if self.dataset.is_some() => Ok(Vec::new()),
            (None, None) => Err(config_error("offline.size", "one of `size` or `sizes` is required")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "K")]
    Episodes,
    #[serde(rename = "K_j")]
    BatchSize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// `online` or `offline`.
    pub mode: Mode,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mdp: Option<MdpSource>,
    #[serde(default)]
    pub estimator: Option<EstimatorBlock>,
    #[serde(default)]
    pub online: Option<OnlineBlock>,
    #[serde(default)]
    pub offline: Option<OfflineBlock>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

pub(crate) fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|err| {
            let mut path = err.path().to_string();
            let inner = err.into_inner().to_string();
            // serde reports a missing field at its parent; name the field itself
            if let Some(field) = inner.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
                path = if path == "." {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
            }
            config_error(&path, inner)
        })?;
        Ok(cfg)
    }

    /// Parses, resolves file references relative to the config's directory,
    /// and checks invariants.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| config_error("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(MdpSource::File { path }) = &mut self.mdp {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(OfflineBlock { dataset: Some(p), .. }) = &mut self.offline {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "at least one seed is required"));
        }
        let needs_mdp = match self.mode {
            Mode::Estimate => false,
            Mode::Online | Mode::Offline => true,
            Mode::Sweep => true,
        };
        if needs_mdp && self.mdp.is_none() {
            return Err(config_error("mdp", "this mode needs an MDP source"));
        }
        if let Some(MdpSource::File { path }) = &self.mdp {
            if !path.exists() {
                return Err(config_error("mdp.path", format!("{} does not exist", path.display())));
            }
        }
        match self.mode {
            Mode::Estimate => self.require_estimator().map(|_| ()),
            Mode::Online => self.require_online().map(|_| ()),
            Mode::Offline => self.require_offline().map(|_| ()),
            Mode::Sweep => {
                let sweep = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| config_error("sweep", "sweep mode needs a `sweep` block"))?;
                if sweep.grid.is_empty() {
                    return Err(config_error("sweep.grid", "grid must be nonempty"));
                }
                match (sweep.mode, sweep.axis) {
                    (Mode::Online, SweepAxis::Alpha | SweepAxis::Episodes) => self.require_online().map(|_| ()),
                    (Mode::Offline, SweepAxis::Alpha | SweepAxis::BatchSize) => self.require_offline().map(|_| ()),
                    (mode, axis) => Err(config_error(
                        "sweep.axis",
                        format!("axis {axis:?} is not supported for {mode:?} sweeps"),
                    )),
                }
            }
        }
    }

    pub fn require_estimator(&self) -> Result<&EstimatorBlock> {
        let e = self
            .estimator
            .as_ref()
            .ok_or_else(|| config_error("estimator", "estimate mode needs an `estimator` block"))?;
        if e.num_batches == 0 {
            return Err(config_error("estimator.num_batches", "must be positive"));
        }
        if e.num_bad > e.num_batches {
            return Err(config_error("estimator.num_bad", "cannot exceed num_batches"));
        }
        if e.min_size > e.max_size {
            return Err(config_error("estimator.min_size", "must not exceed max_size"));
        }
        if e.sample_sigma.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return Err(config_error("estimator.sample_sigma", "must be finite and nonnegative"));
        }
        if e.trials == 0 {
            return Err(config_error("estimator.trials", "must be positive"));
        }
        Ok(e)
    }

    pub fn require_online(&self) -> Result<&OnlineBlock> {
        self.online
            .as_ref()
            .ok_or_else(|| config_error("online", "this mode needs an `online` block"))
    }

    pub fn require_offline(&self) -> Result<&OfflineBlock> {
        let o = self
            .offline
            .as_ref()
            .ok_or_else(|| config_error("offline", "this mode needs an `offline` block"))?;
        if let Some(p) = &o.dataset {
            if !p.exists() {
                return Err(config_error(
                    "offline.dataset",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        if o.num_bad > o.num_agents {
            return Err(config_error("offline.num_bad", "cannot exceed num_agents"));
        }
        o.batch_sizes()?;
        Ok(o)
    }
}
