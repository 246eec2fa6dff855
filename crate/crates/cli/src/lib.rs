//! The `comcts` command line: search, build-dataset, analyze and bench.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{cmd_analyze, cmd_bench, cmd_build_dataset, cmd_search, CommandError};
pub use config::{ConfigError, RunConfig};

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Failure,
    Usage,
    Io,
    AllFailed,
    Interrupted,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::Usage => 2,
            ExitStatus::Io => 3,
            ExitStatus::AllFailed => 4,
            ExitStatus::Interrupted => 130,
        }
    }
}

impl From<ExitStatus> for std::process::ExitCode {
    fn from(s: ExitStatus) -> Self {
        std::process::ExitCode::from(s.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    /// One JSON document on stdout.
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "comcts", version, about = "Collective Monte Carlo tree search over reasoning paths")]
pub struct Cli {
    /// Run configuration (search, build-dataset) or bench configuration (bench).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the number of questions or tasks processed in parallel.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Repeat for more log output (warnings are always shown).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search every question and stream one record per line.
    Search(SearchArgs),
    /// Keep succeeded records, attach reflective paths and emit SFT samples.
    BuildDataset(BuildDatasetArgs),
    /// Reasoning-step statistics of a record file.
    Analyze(AnalyzeArgs),
    /// Compare collective search against single-model MCTS on a synthetic world.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Question file (JSONL); overrides `io.questions`.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Record file to write; overrides `io.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Share of kept records that get a reflective path.
    #[arg(long)]
    pub reflection_ratio: Option<f64>,
    /// SFT sample file; defaults to the output path with `.sft.jsonl`.
    #[arg(long)]
    pub sft_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub records: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Also write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub format: Format,
    /// Set on Ctrl-C; long commands stop at the next safe point.
    pub interrupt: Arc<AtomicBool>,
}

pub fn run(cli: Cli, interrupt: Arc<AtomicBool>) -> ExitStatus {
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        workers: cli.workers,
        format: cli.format,
        interrupt,
    };
    let result = match &cli.command {
        Command::Search(a) => cmd_search(&globals, a),
        Command::BuildDataset(a) => cmd_build_dataset(&globals, a),
        Command::Analyze(a) => cmd_analyze(&globals, a),
        Command::Bench(a) => cmd_bench(&globals, a),
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            e.status()
        }
    }
}
