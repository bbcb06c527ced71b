use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Outcome, Session};
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "conefluct",
    version,
    about = "Fluctuations of products of positive random matrices"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, env = "CONEFLUCT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true, env = "CONEFLUCT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "CONEFLUCT_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true, env = "CONEFLUCT_OUT")]
    pub out: Option<PathBuf>,
    /// Simulate even when hypothesis checks fail.
    #[arg(long, global = true, env = "CONEFLUCT_FORCE")]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the hypotheses on the law.
    Check,
    /// Stationary measure, dominant eigenvalues and the Poisson solution.
    Spectral,
    /// Monte Carlo estimators: survival, V, conditional samples, V table.
    Simulate,
    /// Compare the artifacts against the limit theorems.
    Validate {
        /// Multiplies sigma in the conditional-law comparison (negative control).
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
    },
    /// Covariance decay of the cocycle and convolution contraction.
    Covariance,
}

/// Runs on a dedicated pool so that `--workers` is honoured.
fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker pool")?;
    Ok(pool.install(f))
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let g = cli.global;
    let config = g
        .config
        .context("--config is required (or set CONEFLUCT_CONFIG)")?;
    let overrides = Overrides {
        seed: g.seed,
        out: g.out,
        workers: g.workers,
        force: g.force,
    };
    let run = RunConfig::load(&config, overrides)?;
    let workers = run.workers;
    let session = Session::load(run)?;
    with_workers(workers, || match cli.command {
        Command::Check => commands::cmd_check(&session),
        Command::Spectral => commands::cmd_spectral(&session),
        Command::Simulate => commands::cmd_simulate(&session),
        Command::Validate { sigma_scale } => commands::cmd_validate(&session, sigma_scale),
        Command::Covariance => commands::cmd_covariance(&session),
    })?
}
