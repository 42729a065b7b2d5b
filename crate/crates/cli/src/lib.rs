//! Command-line front end for the qisac simulator.
//!
//! Three subcommands write CSV tables and JSON summaries into an output directory:
//! `analytics` (closed-form curves), `run` (closed-loop convergence trials) and
//! `sweep` (BER versus sensing requirement).

pub mod commands;
pub mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfigFile;

pub const VERSION: &str = concat!("qisac ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<qisac_core::Error> for CliError {
    fn from(e: qisac_core::Error) -> Self {
        use qisac_core::Error::*;
        match e {
            InvalidParams(_) | InvalidConfig(_) | EmptyBlock | Infeasible { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qisac",
    version,
    about = "Homodyne BPSK sensing/communication simulator"
)]
pub struct Cli {
    /// Master seed; overrides the config file. QISAC_SEED is used when neither is set.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for trial parallelism (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate BER and Fisher information over the offset, F_c^max and the
    /// known-phase trade-off curve
    Analytics(AnalyticsArgs),
    /// Run closed-loop convergence trials
    Run { config: PathBuf },
    /// Sweep the sensing requirement and compare with the known-phase optimum
    Sweep { config: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct AnalyticsArgs {
    #[arg(long = "E")]
    pub energy: f64,
    #[arg(long)]
    pub eta: f64,
    #[arg(long = "Na")]
    pub na: f64,
    /// Offset grid points over [0, 180] degrees
    #[arg(long, default_value_t = 181)]
    pub grid: usize,
    /// Block length for F_c^max and the trade-off curve
    #[arg(long = "N", default_value_t = 1000)]
    pub n: usize,
    /// Requirement levels on the trade-off curve, spanning [0, F_c^max]
    #[arg(long, default_value_t = 21)]
    pub pareto_points: usize,
}

/// Master seed: `--seed`, else the config file's seed, else QISAC_SEED, else 0.
pub fn effective_seed(flag: Option<u64>, file: &RunConfigFile) -> Result<u64, CliError> {
    if let Some(seed) = flag.or(file.experiment.seed) {
        return Ok(seed);
    }
    match std::env::var("QISAC_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("QISAC_SEED is not an unsigned integer: {v:?}"))),
        Err(_) => Ok(0),
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Analytics(args) => commands::analytics(args, &cli.out_dir),
        Command::Run { config } => {
            let file = RunConfigFile::load(config)?;
            commands::run(&file, effective_seed(cli.seed, &file)?, &cli.out_dir)
        }
        Command::Sweep { config } => {
            let file = RunConfigFile::load(config)?;
            commands::sweep(&file, effective_seed(cli.seed, &file)?, &cli.out_dir)
        }
    }
}
