//! Experiment configuration, command drivers, and result persistence.
//!
//! Traces go to CSV and summaries to pretty-printed JSON. Every random draw
//! comes from a seed stream keyed by the run seed, so outputs are
//! byte-identical across reruns and thread counts.

mod commands;
mod config;

pub use commands::{
    build_offline_dataset, cmd_estimate, cmd_offline, cmd_online, cmd_sweep, estimate_trial, online_config,
    run_command, run_estimate, run_offline, run_online, run_sweep, EstimateSummary, OfflineSummary, OnlineSummary,
    SweepRow, TrialRecord,
};
pub use config::{
    BehaviorSpec, ComparatorSpec, EstimatorBlock, ExperimentConfig, MdpSource, Mode, OfflineBlock, OnlineBlock,
    SweepAxis, SweepBlock,
};
