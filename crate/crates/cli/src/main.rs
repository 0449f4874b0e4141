//! `mtard`: pretrain teachers, distil students, evaluate checkpoints and
//! chart finished runs.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtard_core::trainer::Mode;

/// Bad flags, config files or run directories. Exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser)]
#[command(name = "mtard", version, about = "Multi-teacher adversarial robustness distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a clean (mode natural) or robust (mode sat) teacher.
    Pretrain(RunArgs),
    /// Distil a student from two pretrained teachers.
    Distill(RunArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Write CSV and SVG charts for a run directory.
    Report(ReportArgs),
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| {
        let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
        format!("unknown mode '{s}', expected one of {}", names.join(", "))
    })
}

#[derive(Args)]
pub struct DataArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep only the first N training examples.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Base directory for relative data paths.
    #[arg(long, env = "MTARD_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Overrides the configured mode.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Run directory. Defaults to runs/<mode>-seed<seed>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue the run stored in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are complete.
    #[arg(long)]
    pub halt_after: Option<usize>,
    /// No per-epoch progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint file; its network must match the configured model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory holding metrics.jsonl.
    pub run: PathBuf,
    /// Output directory. Defaults to <run>/report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => commands::run(a, true),
        Command::Distill(a) => commands::run(a, false),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => report::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
