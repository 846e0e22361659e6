//! Command-line runner: six subcommands, each delegating to one library
//! operation and leaving a manifest next to its outputs.
//!
//! [`run_from`] parses arguments and runs in-process, so the same code
//! path serves the binary and the test suites.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use emodetect_core::backend::BackendError;
use emodetect_core::corpus::CorpusError;
use emodetect_core::eval::EvalError;
use emodetect_core::features::FeatureError;
use emodetect_core::head::HeadError;
use emodetect_core::prompting::PromptError;
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_compare, cmd_eval, cmd_export, cmd_infer, cmd_split, cmd_train_head, RunOutcome, Summary,
};
pub use config::{BackendKind, CommandKind, Regime, RunArgs, RunConfig};
pub use manifest::{content_hash, Manifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration:\n{}", .0.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<String>),
    #[error("data error: {0}")]
    Data(#[from] CorpusError),
    #[error("prompt error: {0}")]
    Prompt(#[from] PromptError),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("head error: {0}")]
    Head(#[from] HeadError),
    #[error("feature error: {0}")]
    Features(#[from] FeatureError),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for each error category.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Prompt(_) => 4,
            CliError::Backend(_) | CliError::Features(_) => 5,
            CliError::Head(_) => 6,
            CliError::Eval(_) => 7,
            CliError::Io { .. } => 8,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "emodetect",
    version,
    about = "Multilingual multi-label emotion detection runs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/dev split per language.
    Split(RunArgs),
    /// Instruction-tuning JSONL for external trainers.
    Export(RunArgs),
    /// Train the classification head on sentence features.
    TrainHead(RunArgs),
    /// Predict labels with a generation backend or a trained head.
    Infer(RunArgs),
    /// Score predictions against gold labels.
    Eval(RunArgs),
    /// Per-sample comparison of base and pairwise predictions.
    Compare(RunArgs),
}

pub fn run(cli: Cli) -> Result<RunOutcome, CliError> {
    let (kind, args) = match &cli.command {
        Command::Split(a) => (CommandKind::Split, a),
        Command::Export(a) => (CommandKind::Export, a),
        Command::TrainHead(a) => (CommandKind::TrainHead, a),
        Command::Infer(a) => (CommandKind::Infer, a),
        Command::Eval(a) => (CommandKind::Eval, a),
        Command::Compare(a) => (CommandKind::Compare, a),
    };
    let cfg = RunConfig::resolve(args, kind)?;
    match kind {
        CommandKind::Split => cmd_split(&cfg),
        CommandKind::Export => cmd_export(&cfg),
        CommandKind::TrainHead => cmd_train_head(&cfg),
        CommandKind::Infer => cmd_infer(&cfg),
        CommandKind::Eval => cmd_eval(&cfg),
        CommandKind::Compare => cmd_compare(&cfg),
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run_from<I, T>(args: I) -> Result<RunOutcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}
