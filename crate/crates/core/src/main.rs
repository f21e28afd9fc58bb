use std::path::PathBuf;
use std::process::ExitCode;

use byzrl::harness::{run_command, ExperimentConfig, Mode};
use byzrl::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "byzrl",
    version,
    about = "Byzantine-robust estimation and distributed tabular RL experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo coverage of the robust mean estimator.
    Estimate(RunArgs),
    /// Distributed optimistic value iteration with Byzantine agents.
    Online(RunArgs),
    /// Pessimistic value iteration from corrupted batches.
    Offline(RunArgs),
    /// Grid over alpha, K or K_j for an online or offline base config.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Estimate(a) => (Mode::Estimate, a),
        Command::Online(a) => (Mode::Online, a),
        Command::Offline(a) => (Mode::Offline, a),
        Command::Sweep(a) => (Mode::Sweep, a),
    };
    let result = ExperimentConfig::load(&args.config).and_then(|mut cfg| {
        if cfg.mode != mode {
            return Err(Error::Config {
                path: "mode".into(),
                message: format!("config declares {:?} but the {:?} command was invoked", cfg.mode, mode),
            });
        }
        if let Some(seed) = args.seed {
            cfg.seeds = vec![seed];
        }
        run_command(&cfg, &args.out)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ Error::Config { .. }) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
