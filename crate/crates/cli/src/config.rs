//! Run configuration: command-line flags layered over an optional JSON file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use emodetect_core::backend::http::ENV_ENDPOINT;
use emodetect_core::backend::GenerationConfig;
use emodetect_core::corpus::Track;
use emodetect_core::eval::PearsonMode;
use emodetect_core::head::TrainConfig;
use emodetect_core::prompting::Strategy;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// One run per language.
    Separated,
    /// All languages pooled into one run.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    MockEcho,
    MockLexicon,
    Head,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_possible_value().expect("no skipped variants");
        f.write_str(v.get_name())
    }
}

/// Which subcommand a configuration is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Split,
    Export,
    TrainHead,
    Infer,
    Eval,
    Compare,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Split => "split",
            CommandKind::Export => "export",
            CommandKind::TrainHead => "train-head",
            CommandKind::Infer => "infer",
            CommandKind::Eval => "eval",
            CommandKind::Compare => "compare",
        })
    }
}

fn parse_pearson(s: &str) -> Result<PearsonMode, String> {
    match s {
        "per-emotion" => Ok(PearsonMode::PerEmotion),
        "flattened" => Ok(PearsonMode::Flattened),
        other => Err(format!(
            "unknown pearson mode `{other}` (expected per-emotion or flattened)"
        )),
    }
}

/// Flags shared by every subcommand. Unset flags fall back to `--config`,
/// then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub track: Option<Track>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Languages to use, comma separated; defaults to every `--data` language.
    #[arg(long, value_delimiter = ',')]
    pub langs: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub regime: Option<Regime>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with any of the run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Decide pairwise track A answers from first-token yes/no probabilities.
    #[arg(long)]
    pub use_logit_probs: bool,
    /// Input data as `LANG=PATH` (CSV with id,text,labels or JSON Lines).
    #[arg(long = "data", value_name = "LANG=PATH")]
    pub data: Vec<String>,
    /// Dev data for train-head as `LANG=PATH`; without it the training data
    /// is split internally.
    #[arg(long = "dev-data", value_name = "LANG=PATH")]
    pub dev_data: Vec<String>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// Keyword lexicon (JSON object: emotion -> keywords) for mock-lexicon.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Head checkpoint file, or a train-head output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory of an infer run, for eval.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Infer output directories for compare.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub pairwise: Option<PathBuf>,
    /// Dimension of the hashed n-gram features used by train-head.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Model server providing `/v1/embeddings` features for train-head.
    #[arg(long)]
    pub embeddings_endpoint: Option<String>,
    #[arg(long, value_parser = parse_pearson)]
    pub pearson_mode: Option<PearsonMode>,
    #[arg(long)]
    pub max_retries: Option<u32>,
}

/// The JSON config file: every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    track: Option<Track>,
    strategy: Option<Strategy>,
    langs: Option<Vec<String>>,
    regime: Option<Regime>,
    backend: Option<BackendKind>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    concurrency: Option<usize>,
    use_logit_probs: Option<bool>,
    data: Option<BTreeMap<String, PathBuf>>,
    dev_data: Option<BTreeMap<String, PathBuf>>,
    dev_fraction: Option<f64>,
    lexicon: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    predictions: Option<PathBuf>,
    base: Option<PathBuf>,
    pairwise: Option<PathBuf>,
    feature_dim: Option<usize>,
    embeddings_endpoint: Option<String>,
    pearson_mode: Option<PearsonMode>,
    max_retries: Option<u32>,
    generation: Option<GenerationConfig>,
    train: Option<TrainConfig>,
}

/// Fully resolved settings of one run. Serializes to a valid config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub track: Track,
    pub strategy: Strategy,
    pub langs: Vec<String>,
    pub regime: Regime,
    pub backend: BackendKind,
    pub seed: u64,
    pub out: PathBuf,
    pub concurrency: usize,
    pub use_logit_probs: bool,
    pub data: BTreeMap<String, PathBuf>,
    pub dev_data: BTreeMap<String, PathBuf>,
    pub dev_fraction: f64,
    pub lexicon: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub pairwise: Option<PathBuf>,
    pub feature_dim: usize,
    pub embeddings_endpoint: Option<String>,
    pub pearson_mode: PearsonMode,
    pub max_retries: u32,
    pub generation: GenerationConfig,
    pub train: TrainConfig,
}

fn parse_lang_paths(
    entries: &[String],
    flag: &str,
    problems: &mut Vec<String>,
) -> BTreeMap<String, PathBuf> {
    let mut out = BTreeMap::new();
    for entry in entries {
        match entry.split_once('=') {
            Some((lang, path)) if !lang.trim().is_empty() && !path.trim().is_empty() => {
                if out
                    .insert(lang.trim().to_string(), PathBuf::from(path.trim()))
                    .is_some()
                {
                    problems.push(format!("{flag}: language `{}` given twice", lang.trim()));
                }
            }
            _ => problems.push(format!("{flag}: expected LANG=PATH, got `{entry}`")),
        }
    }
    out
}

fn read_file_config(path: &Path) -> Result<FileConfig, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
}

impl RunConfig {
    /// Merges flags over the config file and validates the result for
    /// `command`, reporting every problem at once.
    pub fn resolve(args: &RunArgs, command: CommandKind) -> Result<Self, CliError> {
        let mut problems = Vec::new();
        let file = match &args.config {
            Some(path) => read_file_config(path).unwrap_or_else(|e| {
                problems.push(e);
                FileConfig::default()
            }),
            None => FileConfig::default(),
        };

        let mut data = file.data.unwrap_or_default();
        data.extend(parse_lang_paths(&args.data, "--data", &mut problems));
        let mut dev_data = file.dev_data.unwrap_or_default();
        dev_data.extend(parse_lang_paths(
            &args.dev_data,
            "--dev-data",
            &mut problems,
        ));

        let seed = args.seed.or(file.seed).unwrap_or(0);
        let mut train = file.train.unwrap_or_default();
        train.seed = seed;
        let use_logit_probs = args.use_logit_probs || file.use_logit_probs.unwrap_or(false);
        let mut generation = file.generation.unwrap_or_default();
        if use_logit_probs {
            generation.want_logprobs = true;
        }

        let cfg = RunConfig {
            track: args.track.or(file.track).unwrap_or(Track::A),
            strategy: args.strategy.or(file.strategy).unwrap_or(Strategy::Base),
            langs: args
                .langs
                .clone()
                .or(file.langs)
                .unwrap_or_else(|| data.keys().cloned().collect()),
            regime: args.regime.or(file.regime).unwrap_or(Regime::Separated),
            backend: args.backend.or(file.backend).unwrap_or(BackendKind::Http),
            seed,
            out: args
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("runs")),
            concurrency: args.concurrency.or(file.concurrency).unwrap_or(4),
            use_logit_probs,
            data,
            dev_data,
            dev_fraction: args.dev_fraction.or(file.dev_fraction).unwrap_or(0.1),
            lexicon: args.lexicon.clone().or(file.lexicon),
            checkpoint: args.checkpoint.clone().or(file.checkpoint),
            predictions: args.predictions.clone().or(file.predictions),
            base: args.base.clone().or(file.base),
            pairwise: args.pairwise.clone().or(file.pairwise),
            feature_dim: args.feature_dim.or(file.feature_dim).unwrap_or(512),
            embeddings_endpoint: args
                .embeddings_endpoint
                .clone()
                .or(file.embeddings_endpoint),
            pearson_mode: args.pearson_mode.or(file.pearson_mode).unwrap_or_default(),
            max_retries: args.max_retries.or(file.max_retries).unwrap_or(3),
            generation,
            train,
        };
        cfg.check(command, &mut problems);
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(problems))
        }
    }

    fn check(&self, command: CommandKind, problems: &mut Vec<String>) {
        if self.data.is_empty() {
            problems.push("no input data (use --data LANG=PATH)".into());
        }
        for (lang, path) in self.data.iter().chain(&self.dev_data) {
            if !path.is_file() {
                problems.push(format!(
                    "data for `{lang}`: {} is not a readable file",
                    path.display()
                ));
            }
        }
        for lang in &self.langs {
            if !self.data.contains_key(lang) {
                problems.push(format!("language `{lang}` has no --data entry"));
            }
        }
        if self.langs.is_empty() && !self.data.is_empty() {
            problems.push("--langs selects no language".into());
        }
        if self.concurrency == 0 {
            problems.push("concurrency must be at least 1".into());
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            problems.push(format!(
                "dev_fraction must lie in (0, 1), got {}",
                self.dev_fraction
            ));
        }
        if self.feature_dim == 0 {
            problems.push("feature_dim must be positive".into());
        }
        if let Err(e) = self.generation.validate() {
            problems.push(format!("generation: {e}"));
        }
        if let Err(e) = self.train.validate() {
            problems.push(format!("train: {e}"));
        }
        if self.use_logit_probs && (self.strategy != Strategy::Pairwise || self.track != Track::A) {
            problems.push("--use-logit-probs needs --strategy pairwise and --track a".into());
        }

        match command {
            CommandKind::TrainHead => {
                if self.track != Track::A {
                    problems.push("train-head supports track a only".into());
                }
                if !self.dev_data.is_empty() {
                    for lang in &self.langs {
                        if !self.dev_data.contains_key(lang) {
                            problems.push(format!("language `{lang}` has no --dev-data entry"));
                        }
                    }
                }
            }
            CommandKind::Infer => match self.backend {
                BackendKind::Http => {
                    if std::env::var_os(ENV_ENDPOINT).is_none() {
                        problems.push(format!("backend http needs {ENV_ENDPOINT}"));
                    }
                }
                BackendKind::MockLexicon => match &self.lexicon {
                    None => problems.push("backend mock-lexicon needs --lexicon".into()),
                    Some(p) if !p.is_file() => {
                        problems.push(format!("lexicon {} is not a readable file", p.display()))
                    }
                    Some(_) => {}
                },
                BackendKind::Head => {
                    if self.track != Track::A {
                        problems.push("backend head supports track a only".into());
                    }
                    match &self.checkpoint {
                        None => problems.push("backend head needs --checkpoint".into()),
                        Some(p) if !p.exists() => {
                            problems.push(format!("checkpoint {} does not exist", p.display()))
                        }
                        Some(_) => {}
                    }
                }
                BackendKind::MockEcho => {}
            },
            CommandKind::Eval => match &self.predictions {
                None => problems.push("eval needs --predictions <infer output dir>".into()),
                Some(p) if !p.is_dir() => {
                    problems.push(format!("predictions {} is not a directory", p.display()))
                }
                Some(_) => {}
            },
            CommandKind::Compare => {
                for (flag, dir) in [("--base", &self.base), ("--pairwise", &self.pairwise)] {
                    match dir {
                        None => problems.push(format!("compare needs {flag} <infer output dir>")),
                        Some(p) if !p.is_dir() => {
                            problems.push(format!("{flag} {} is not a directory", p.display()))
                        }
                        Some(_) => {}
                    }
                }
            }
            CommandKind::Split | CommandKind::Export => {}
        }
    }
}
