//! `qem` — configuration-driven front end for the quadratic
//! electromechanics toolkit. Exit codes: 0 success, 1 computational error,
//! 2 input error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Compute(String),
}

#[derive(Parser)]
#[command(
    name = "qem",
    version,
    about = "Simulation and reconstruction toolkit for a qubit quadratically coupled to a mechanical oscillator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to a JSON config, or `preset:<name>` for a bundled one.
    #[arg(long)]
    config: String,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and write the per-Fock-state response kernel (PSF map).
    Psf {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Integrate a sideband protocol and write the trajectory and final
    /// distribution.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Deconvolve or fit a measured spectrum.
    Reconstruct {
        #[command(flatten)]
        common: CommonArgs,
        /// Two-column spectrum CSV (freq_mhz, pe).
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Bound the true Fano factor with simulated experiments.
    FanoBound {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print derived frequencies and rates for the configured system.
    Rates {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn prepare(common: &CommonArgs) -> Result<config::ExperimentConfig, CliError> {
    let mut cfg = config::load_config(&common.config).map_err(CliError::Input)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    let threads = common.threads.or(cfg.threads);
    if let Some(k) = threads {
        // Ignore failure if a global pool already exists (e.g. tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    Ok(cfg)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Psf { common } => {
            let cfg = prepare(common)?;
            commands::cmd_psf(&cfg, common.out.as_deref())
        }
        Command::Simulate { common } => {
            let cfg = prepare(common)?;
            commands::cmd_simulate(&cfg, common.out.as_deref())
        }
        Command::Reconstruct { common, spectrum } => {
            let cfg = prepare(common)?;
            commands::cmd_reconstruct(&cfg, spectrum.as_deref(), common.out.as_deref())
        }
        Command::FanoBound { common } => {
            let cfg = prepare(common)?;
            commands::cmd_fano_bound(&cfg, common.out.as_deref())
        }
        Command::Rates { common } => {
            let cfg = prepare(common)?;
            commands::cmd_rates(&cfg, common.out.as_deref())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("TOOL_LOG")).init();
    match run() {
        Ok(()) => {}
        Err(CliError::Input(msg)) => {
            eprintln!("input error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Compute(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
