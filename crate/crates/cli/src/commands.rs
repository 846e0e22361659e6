//! The six subcommands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use emodetect_core::analysis::{
    emotion_intensity_performance, improvement_distribution, ImprovementHistogram,
};
use emodetect_core::backend::{
    run_inference, Backend, EchoGoldBackend, HttpBackend, InferenceOptions, LexiconBackend,
    RetryPolicy, RunStats,
};
use emodetect_core::corpus::{
    internal_split, load_dataset, mix_languages, Dataset, LabelAssignment, Track,
};
use emodetect_core::eval::{
    macro_f1, pearson_score, read_predictions, write_predictions, MetricsReport,
};
use emodetect_core::features::{
    EmbeddingClient, FeatureProvider, FeatureSpec, HashedNgramFeaturizer,
};
use emodetect_core::head::{predict_dataset, train_head, EpochRecord, HeadCheckpoint, HeadError};
use emodetect_core::prompting::export_instruction_dataset;
use serde::Serialize;

use crate::config::{BackendKind, CommandKind, Regime, RunConfig};
use crate::manifest::{Manifest, Recorder};
use crate::CliError;

type Predictions = Vec<(String, LabelAssignment)>;

pub const MIXED_GROUP: &str = "mixed";

#[derive(Debug, Clone, Serialize)]
pub struct SplitSummary {
    pub group: String,
    pub train: usize,
    pub dev: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub group: String,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command", content = "groups")]
pub enum Summary {
    Split(Vec<SplitSummary>),
    Export(Vec<(String, usize)>),
    TrainHead(Vec<TrainSummary>),
    Infer(Vec<(String, RunStats)>),
    Eval(Vec<(String, MetricsReport)>),
    Compare(Vec<(String, ImprovementHistogram)>),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub summary: Summary,
}

fn load_input(path: &Path, track: Track, lang: &str) -> Result<Dataset, CliError> {
    let is_jsonl = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl"));
    if !is_jsonl {
        return Ok(load_dataset(path, track, lang)?);
    }
    let d = Dataset::load_jsonl(path, track)?;
    if d.langs().len() == 1 && d.langs().contains(lang) {
        Ok(d)
    } else {
        Ok(d.language(lang)?)
    }
}

/// Datasets of the selected languages grouped by regime.
fn load_groups(
    cfg: &RunConfig,
    sources: &std::collections::BTreeMap<String, PathBuf>,
    rec: &mut Recorder,
) -> Result<Vec<(String, Dataset)>, CliError> {
    let mut per_lang = Vec::new();
    for lang in &cfg.langs {
        let path = &sources[lang];
        rec.input(path)?;
        let d = rec.time("load", || load_input(path, cfg.track, lang))?;
        per_lang.push((lang.clone(), d));
    }
    Ok(match cfg.regime {
        Regime::Separated => per_lang,
        Regime::Mixed => {
            let parts: Vec<Dataset> = per_lang.into_iter().map(|(_, d)| d).collect();
            vec![(MIXED_GROUP.to_string(), mix_languages(&parts)?)]
        }
    })
}

fn group_dir(cfg: &RunConfig, group: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.out.join(group);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn finish(cfg: &RunConfig, rec: Recorder, summary: Summary) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let manifest = rec.finish(&cfg.out)?;
    Ok(RunOutcome {
        out: cfg.out.clone(),
        manifest,
        summary,
    })
}

pub fn cmd_split(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut rec = Recorder::new(CommandKind::Split, cfg);
    let mut summary = Vec::new();
    for (group, d) in load_groups(cfg, &cfg.data, &mut rec)? {
        let (train, dev) = rec.time("split", || internal_split(&d, cfg.dev_fraction, cfg.seed))?;
        let dir = group_dir(cfg, &group)?;
        train.save_jsonl(dir.join("train.jsonl"))?;
        dev.save_jsonl(dir.join("dev.jsonl"))?;
        rec.output(format!("{group}/train.jsonl"));
        rec.output(format!("{group}/dev.jsonl"));
        summary.push(SplitSummary {
            group,
            train: train.len(),
            dev: dev.len(),
        });
    }
    finish(cfg, rec, Summary::Split(summary))
}

pub fn cmd_export(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut rec = Recorder::new(CommandKind::Export, cfg);
    let mut summary = Vec::new();
    for (group, d) in load_groups(cfg, &cfg.data, &mut rec)? {
        let path = group_dir(cfg, &group)?.join("instructions.jsonl");
        let n = rec.time("export", || {
            export_instruction_dataset(&d, cfg.strategy, cfg.track, &path)
        })?;
        rec.output(format!("{group}/instructions.jsonl"));
        summary.push((group, n));
    }
    finish(cfg, rec, Summary::Export(summary))
}

fn feature_provider(
    spec: &FeatureSpec,
    endpoint_override: Option<&str>,
) -> Result<Box<dyn FeatureProvider>, CliError> {
    Ok(match spec {
        FeatureSpec::HashedNgram { dim, seed } => Box::new(HashedNgramFeaturizer::new(*dim, *seed)),
        FeatureSpec::Embeddings { endpoint, dim } => {
            let client = EmbeddingClient::connect(endpoint_override.unwrap_or(endpoint))?;
            if client.dim() != *dim {
                return Err(HeadError::Checkpoint(format!(
                    "server advertises dimension {}, checkpoint expects {dim}",
                    client.dim()
                ))
                .into());
            }
            Box::new(client)
        }
    })
}

pub fn cmd_train_head(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut rec = Recorder::new(CommandKind::TrainHead, cfg);
    let provider: Box<dyn FeatureProvider> = match &cfg.embeddings_endpoint {
        Some(endpoint) => Box::new(EmbeddingClient::connect(endpoint)?),
        None => Box::new(HashedNgramFeaturizer::new(cfg.feature_dim, cfg.seed)),
    };
    let groups = load_groups(cfg, &cfg.data, &mut rec)?;
    let dev_groups = if cfg.dev_data.is_empty() {
        None
    } else {
        Some(load_groups(cfg, &cfg.dev_data, &mut rec)?)
    };
    let mut summary = Vec::new();
    for (i, (group, d)) in groups.into_iter().enumerate() {
        let (train, dev) = match &dev_groups {
            Some(devs) => (d, devs[i].1.clone()),
            None => internal_split(&d, cfg.dev_fraction, cfg.seed)?,
        };
        let trained = rec.time("train", || {
            train_head(&train, &dev, provider.as_ref(), &cfg.train)
        })?;
        let ckpt = HeadCheckpoint::new(train.schema(), provider.describe(), &cfg.train, &trained);
        ckpt.save(group_dir(cfg, &group)?.join("checkpoint.json"))?;
        rec.output(format!("{group}/checkpoint.json"));
        summary.push(TrainSummary {
            group,
            best_epoch: trained.best_epoch,
            history: trained.history,
        });
    }
    finish(cfg, rec, Summary::TrainHead(summary))
}

fn checkpoint_path(root: &Path, group: &str) -> PathBuf {
    if root.is_dir() {
        root.join(group).join("checkpoint.json")
    } else {
        root.to_path_buf()
    }
}

fn head_predictions(
    cfg: &RunConfig,
    d: &Dataset,
    group: &str,
    rec: &mut Recorder,
) -> Result<Predictions, CliError> {
    let path = checkpoint_path(cfg.checkpoint.as_deref().expect("validated"), group);
    rec.input(&path)?;
    let ckpt = HeadCheckpoint::load(&path)?;
    if &ckpt.schema()? != d.schema() {
        return Err(HeadError::Checkpoint(format!(
            "checkpoint labels {:?} differ from data labels {:?}",
            ckpt.labels,
            d.schema().labels()
        ))
        .into());
    }
    let provider = feature_provider(&ckpt.features, cfg.embeddings_endpoint.as_deref())?;
    let params = ckpt.params()?;
    Ok(rec.time("predict", || {
        predict_dataset(&params, d, provider.as_ref(), ckpt.config.threshold)
    })?)
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut rec = Recorder::new(CommandKind::Infer, cfg);
    let retry = RetryPolicy {
        max_retries: cfg.max_retries,
        ..Default::default()
    };
    let mut summary = Vec::new();
    for (group, d) in load_groups(cfg, &cfg.data, &mut rec)? {
        let dir = group_dir(cfg, &group)?;
        let (predictions, stats) = if cfg.backend == BackendKind::Head {
            let preds = head_predictions(cfg, &d, &group, &mut rec)?;
            (preds, RunStats::default())
        } else {
            let backend: Box<dyn Backend> = match cfg.backend {
                BackendKind::Http => Box::new(HttpBackend::from_env(retry.clone())?),
                BackendKind::MockEcho => {
                    d.require_labeled()?;
                    Box::new(EchoGoldBackend::from_dataset(&d))
                }
                BackendKind::MockLexicon => {
                    let path = cfg.lexicon.as_deref().expect("validated");
                    rec.input(path)?;
                    Box::new(LexiconBackend::from_json_file(path)?)
                }
                BackendKind::Head => unreachable!("handled above"),
            };
            let opts = InferenceOptions {
                strategy: cfg.strategy,
                track: cfg.track,
                concurrency: cfg.concurrency,
                use_logit_probs: cfg.use_logit_probs,
                journal: Some(dir.join("journal.jsonl")),
            };
            let out = rec.time("inference", || {
                run_inference(&d, backend.as_ref(), &cfg.generation, &opts)
            })?;
            rec.output(format!("{group}/journal.jsonl"));
            (out.predictions, out.stats)
        };
        let path = dir.join("predictions.jsonl");
        let mut w = create(&path)?;
        write_predictions(&predictions, &mut w).map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        write_json(&dir.join("stats.json"), &stats)?;
        rec.output(format!("{group}/predictions.jsonl"));
        rec.output(format!("{group}/stats.json"));
        summary.push((group, stats));
    }
    finish(cfg, rec, Summary::Infer(summary))
}

fn load_predictions(
    root: &Path,
    group: &str,
    d: &Dataset,
    rec: &mut Recorder,
) -> Result<(Predictions, Option<RunStats>), CliError> {
    let path = root.join(group).join("predictions.jsonl");
    rec.input(&path)?;
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let preds = read_predictions(BufReader::new(file), d)?;
    let stats_path = root.join(group).join("stats.json");
    let stats = match fs::read_to_string(&stats_path) {
        Ok(text) => serde_json::from_str(&text).ok(),
        Err(_) => None,
    };
    Ok((preds, stats))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut rec = Recorder::new(CommandKind::Eval, cfg);
    let root = cfg.predictions.as_deref().expect("validated");
    let mut summary = Vec::new();
    for (group, d) in load_groups(cfg, &cfg.data, &mut rec)? {
        d.require_labeled()?;
        let (preds, stats) = load_predictions(root, &group, &d, &mut rec)?;
        let golds = d.golds();
        let report = rec.time("score", || match cfg.track {
            Track::A => macro_f1(&preds, &golds, d.schema()),
            Track::B => pearson_score(&preds, &golds, d.schema(), cfg.pearson_mode),
        })?;
        let report = report.with_drop_rate(stats.map_or(0.0, |s| s.drop_rate));
        let dir = group_dir(cfg, &group)?;
        write_json(&dir.join("report.json"), &report)?;
        let csv_path = dir.join("report.csv");
        report
            .write_csv(create(&csv_path)?)
            .map_err(|e| CliError::io(&csv_path, e.into()))?;
        rec.output(format!("{group}/report.json"));
        rec.output(format!("{group}/report.csv"));
        summary.push((group, report));
    }
    finish(cfg, rec, Summary::Eval(summary))
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut rec = Recorder::new(CommandKind::Compare, cfg);
    let base_root = cfg.base.as_deref().expect("validated");
    let pairwise_root = cfg.pairwise.as_deref().expect("validated");
    let mut summary = Vec::new();
    for (group, d) in load_groups(cfg, &cfg.data, &mut rec)? {
        d.require_labeled()?;
        let golds = d.golds();
        let (base, _) = load_predictions(base_root, &group, &d, &mut rec)?;
        let (pairwise, _) = load_predictions(pairwise_root, &group, &d, &mut rec)?;
        let hist = rec.time("analysis", || {
            improvement_distribution(&base, &pairwise, &golds)
        })?;
        let dir = group_dir(cfg, &group)?;
        let csv_path = dir.join("improvement.csv");
        hist.write_csv(create(&csv_path)?)
            .map_err(|e| CliError::io(&csv_path, e.into()))?;
        let svg_path = dir.join("improvement.svg");
        fs::write(&svg_path, hist.to_svg()).map_err(|e| CliError::io(&svg_path, e))?;
        rec.output(format!("{group}/improvement.csv"));
        rec.output(format!("{group}/improvement.svg"));
        if cfg.track == Track::B {
            for (name, preds) in [("base", &base), ("pairwise", &pairwise)] {
                let table = emotion_intensity_performance(preds, &golds, d.schema())?;
                let path = dir.join(format!("intensity_{name}.csv"));
                table
                    .write_csv(create(&path)?)
                    .map_err(|e| CliError::io(&path, e.into()))?;
                rec.output(format!("{group}/intensity_{name}.csv"));
            }
        }
        summary.push((group, hist));
    }
    finish(cfg, rec, Summary::Compare(summary))
}
