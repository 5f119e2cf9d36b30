//! Command-line driver: run a defense over a dataset, simulate the smoothing
//! study, print call budgets, and summarize persisted runs.
//!
//! Exit codes: `0` success; `1` runtime failure (failed items, budget
//! violations, inconsistent run artifacts); `2` configuration or usage error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pda_core::agents::ChangeIntensity;
use pda_core::harness::Schema;
use pda_core::pipeline::Variant;
use thiserror::Error;

pub mod commands;
pub mod config;

pub use commands::{budget, report, run, run_with_backends, simulate};
pub use config::{BackendSpec, BackendsConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pda", version, about = "Paraphrase-decompose-aggregate defense for vision-language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a defense variant over a dataset and persist the results.
    Run(RunArgs),
    /// Compare simulated PV accuracy with the binomial majority oracle.
    Simulate(SimulateArgs),
    /// Print the expected per-stage call budget.
    Budget(BudgetArgs),
    /// Summarize one persisted run, or compare every run under a directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; `${VAR}` is replaced from the environment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Number of paraphrases.
    #[arg(long)]
    pub n: Option<usize>,
    /// Atomic questions per paraphrase.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub intensity: Option<ChangeIntensity>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<Schema>,
    /// Output directory for manifest.json and records.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent queries; 1 runs sequentially.
    #[arg(long)]
    pub fan_out: Option<usize>,
    /// Answer with the undefended model when an agent fails.
    #[arg(long)]
    pub fallback_undefended: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Per-view accuracy.
    #[arg(long, default_value_t = 0.7)]
    pub q: f64,
    /// Odd view counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [3, 5, 7, 9])]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub fan_out: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = Variant::Full)]
    pub variant: Variant,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// `caption` prints the caption-refinement budget.
    #[arg(long)]
    pub schema: Option<Schema>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// A run directory, or a directory of run directories.
    pub run_dir: PathBuf,
}

/// Dispatches a parsed command, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => run(&args, out),
        Command::Simulate(args) => simulate(&args, out),
        Command::Budget(args) => budget(&args, out),
        Command::Report(args) => report(&args, out),
    }
}
