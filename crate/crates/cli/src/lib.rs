//! Command-line front end for the `har` toolkit.
//!
//! Every subcommand prints a single summary line on standard output and
//! logs to standard error (level from `HAR_LOG`). Exit codes: 0 success,
//! 2 usage, 3 I/O, 4 data or format, 5 configuration.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use har_core::HarError;

pub use config::{RunConfig, LOCK_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "har",
    version,
    about = "Personalized activity recognition with transfer learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-subject dataset directory.
    Synth(SynthArgs),
    /// Train a network on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Personalize a checkpoint to one subject by retraining its classifier.
    Transfer(TransferArgs),
    /// Run the leave-one-subject-out experiment and write reports.
    Loso(LosoArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Summarize a per-fold CSV report as a markdown table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Wisdm,
    Sda,
    Synth,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset location: a WISDM text file (or its directory), an SDA
    /// root, or a CSV / synthetic directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub activities: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub segments_per_activity: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Give every subject the same amplitude, phase and offset.
    #[arg(long)]
    pub no_shift: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Leave this subject out of training.
    #[arg(long)]
    pub exclude: Option<String>,
    /// Training log path; defaults to the checkpoint path with `.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Source checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LosoArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of trc, frozen_source, lr_baseline.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Run seeds 0..N instead of the configured list.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// CSV output; the markdown summary goes next to it with `.md`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only score this subject's windows.
    #[arg(long)]
    pub subject: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Har(HarError),
}

impl From<HarError> for CliError {
    fn from(e: HarError) -> Self {
        CliError::Har(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Har(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Har(e) => match e.root() {
                HarError::Io { .. } => 3,
                HarError::Config(_) | HarError::Parameter(_) => 5,
                HarError::Contract(_) => 1,
                _ => 4,
            },
        }
    }
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Transfer(a) => commands::transfer(&a),
        Command::Loso(a) => commands::loso(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
    }
}

/// Parses `args`, runs the command, prints its summary or error, and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
