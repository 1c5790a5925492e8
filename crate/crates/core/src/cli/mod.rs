//! Command-line front end. Every subcommand writes its outputs plus a
//! `manifest.json` into an output directory.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 strict-parse
//! error, 4 fit failure, 5 too many failed fits in a comparison.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::models::ModelKind;

pub use commands::{compare_cascades, load_cascade_dir};
pub use config::{BuildSettings, EffectiveConfig, FileConfig, FitSettings, SynthSettings};
pub use manifest::{FileDigest, RunManifest, StageTiming};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_STRICT_PARSE: i32 = 3;
pub const EXIT_FIT_FAILED: i32 = 4;
pub const EXIT_BULK_FAILURE: i32 = 5;

/// Environment variable holding the log filter (e.g. `info`, `debug`).
pub const LOG_ENV: &str = "CASCADEFIT_LOG";

#[derive(Debug, Parser)]
#[command(name = "cascadefit", version, about = "Reconstruct tweet cascades and fit SIS / SEIZ / CD-SEIZ models to them")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: number of CPUs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// RK4 substeps per hourly observation.
    #[arg(long, global = true)]
    pub substeps: Option<usize>,
    /// Multi-start count for the optimizer.
    #[arg(long, global = true)]
    pub starts: Option<usize>,
    /// Objective-evaluation budget per start.
    #[arg(long, global = true)]
    pub max_evals: Option<usize>,
    /// JSON file with per-model parameter bounds, e.g. {"seiz": {"beta": [0, 2]}}.
    #[arg(long, global = true)]
    pub bounds_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group a JSONL event log into cascades and write one JSON file per root.
    BuildCascades(BuildArgs),
    /// Fit one model to one cascade file.
    Fit(FitArgs),
    /// Fit all three models to every cascade in a directory and compare them.
    Compare(CompareArgs),
    /// Generate synthetic event logs with known parameters.
    Synth(SynthArgs),
    /// Rebuild the summary and histogram from a comparison CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// JSONL event log.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Abort on the first malformed line.
    #[arg(long)]
    pub strict: bool,
    /// Keep cascades with at least this many reactions.
    #[arg(long)]
    pub min_size: Option<usize>,
    /// Keep at most this many cascades, largest first.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Series length in hours, or `auto` for the last observed reaction.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Write a single `cascades.json` array instead of one file per root.
    #[arg(long)]
    pub bundle: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Cascade JSON file.
    pub cascade: PathBuf,
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory of cascade files, or a bundled `cascades.json`.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// Number of cascades.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Population size per cascade.
    #[arg(long)]
    pub agents: Option<u64>,
    /// Initial infected per channel, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub i0: Option<Vec<u64>>,
    /// Relative per-cascade parameter perturbation.
    #[arg(long)]
    pub jitter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `comparison.csv` written by `compare`.
    pub rows: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError::new(EXIT_INPUT, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } | Error::DuplicateId { .. } => EXIT_STRICT_PARSE,
            Error::FitFailed(_) | Error::DegenerateTarget | Error::Stiffness { .. } | Error::Divergence { .. } => {
                EXIT_FIT_FAILED
            }
            _ => EXIT_INPUT,
        };
        CliError::new(code, e.to_string())
    }
}

/// Parse `std::env::args`, run, and return the exit code.
pub fn run() -> i32 {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Run a parsed command line inside a worker pool of the requested size.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let jobs = cli.global.jobs.or(file.jobs);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::input("--jobs must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::input(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::BuildCascades(args) => commands::build(&cli.global, &file, args),
        Command::Fit(args) => commands::fit(&cli.global, &file, args),
        Command::Compare(args) => commands::compare(&cli.global, &file, args),
        Command::Synth(args) => commands::synth(&cli.global, &file, args),
        Command::Report(args) => commands::report(&cli.global, &file, args),
    })
}
