//! Python bindings: datasets, prompt rendering and parsing, metrics,
//! the classification head and the analysis helpers.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use emodetect_core::analysis::improvement_distribution as core_improvement;
use emodetect_core::backend::{
    self, Completion, EchoGoldBackend, GenerationConfig, InferenceOptions,
};
use emodetect_core::corpus::{self, LabelAssignment, LabelSchema, Track};
use emodetect_core::eval::{self, MetricsReport, PearsonMode};
use emodetect_core::features::{self, FeatureProvider, HashedNgramFeaturizer};
use emodetect_core::head::{self, HeadCheckpoint, TrainConfig};
use emodetect_core::prompting::{self, Strategy};
use emodetect_core::synthetic;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(emodetect, EmodetectError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    EmodetectError::new_err(e.to_string())
}

fn track(s: &str) -> PyResult<Track> {
    s.parse().map_err(err)
}

fn strategy(s: &str) -> PyResult<Strategy> {
    s.parse().map_err(err)
}

type Values = BTreeMap<String, u8>;

fn to_values(a: &LabelAssignment) -> Values {
    a.iter().map(|(l, v)| (l.to_string(), v)).collect()
}

/// Assignment over the labels present in `values`, ordered as in `labels`.
/// Labels of `labels` missing from `values` are masked.
fn assignment(
    labels: &[String],
    t: Track,
    values: &HashMap<String, u8>,
) -> PyResult<LabelAssignment> {
    if let Some(unknown) = values.keys().find(|k| !labels.contains(k)) {
        return Err(err(format!("label `{unknown}` is not in the label set")));
    }
    let present: Vec<&String> = labels.iter().filter(|l| values.contains_key(*l)).collect();
    let schema = LabelSchema::new(present.iter().map(|l| l.as_str()), t).map_err(err)?;
    LabelAssignment::from_pairs(&schema, values.iter().map(|(k, v)| (k.as_str(), *v))).map_err(err)
}

fn rows(
    labels: &[String],
    t: Track,
    rows: &[(String, HashMap<String, u8>)],
) -> PyResult<Vec<(String, LabelAssignment)>> {
    rows.iter()
        .map(|(id, values)| Ok((id.clone(), assignment(labels, t, values)?)))
        .collect()
}

/// Ordered samples with gold labels over a label schema.
#[pyclass(module = "emodetect", frozen, from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: corpus::Dataset,
}

#[pymethods]
impl Dataset {
    /// Reads a per-language CSV file with header `id,text,<labels...>`.
    #[staticmethod]
    fn load_csv(path: PathBuf, track_name: &str, lang: &str) -> PyResult<Self> {
        let inner = corpus::load_dataset(path, track(track_name)?, lang).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load_jsonl(path: PathBuf, track_name: &str) -> PyResult<Self> {
        let inner = corpus::Dataset::load_jsonl(path, track(track_name)?).map_err(err)?;
        Ok(Self { inner })
    }

    /// Seeded random multilingual corpus.
    #[staticmethod]
    #[pyo3(signature = (n, langs, track_name, seed=0))]
    fn synthetic(n: usize, langs: Vec<String>, track_name: &str, seed: u64) -> PyResult<Self> {
        if langs.is_empty() {
            return Err(err("need at least one language"));
        }
        let langs: Vec<&str> = langs.iter().map(String::as_str).collect();
        Ok(Self {
            inner: synthetic::multilingual(n, &langs, track(track_name)?, seed),
        })
    }

    /// Pools datasets of one track over the union of their labels.
    #[staticmethod]
    fn mix(parts: Vec<Dataset>) -> PyResult<Self> {
        let parts: Vec<corpus::Dataset> = parts.into_iter().map(|d| d.inner).collect();
        Ok(Self {
            inner: corpus::mix_languages(&parts).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(track={}, samples={}, labels={:?})",
            self.inner.track(),
            self.inner.len(),
            self.inner.schema().labels()
        )
    }

    #[getter]
    fn track(&self) -> String {
        self.inner.track().to_string()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.schema().labels().to_vec()
    }

    #[getter]
    fn langs(&self) -> Vec<String> {
        self.inner.langs().into_iter().map(str::to_string).collect()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.samples().iter().map(|s| s.id.clone()).collect()
    }

    fn texts(&self) -> Vec<String> {
        self.inner
            .samples()
            .iter()
            .map(|s| s.text.clone())
            .collect()
    }

    /// `(id, {label: value})` pairs; masked labels are absent.
    fn golds(&self) -> PyResult<Vec<(String, Values)>> {
        self.inner.require_labeled().map_err(err)?;
        Ok(self
            .inner
            .golds()
            .iter()
            .map(|(id, a)| (id.clone(), to_values(a)))
            .collect())
    }

    /// Per-language stratified `(train, dev)` split.
    #[pyo3(signature = (dev_fraction=0.1, seed=0))]
    fn split(&self, dev_fraction: f64, seed: u64) -> PyResult<(Dataset, Dataset)> {
        let (train, dev) = corpus::internal_split(&self.inner, dev_fraction, seed).map_err(err)?;
        Ok((Dataset { inner: train }, Dataset { inner: dev }))
    }

    fn language(&self, lang: &str) -> PyResult<Dataset> {
        Ok(Dataset {
            inner: self.inner.language(lang).map_err(err)?,
        })
    }

    fn save_jsonl(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_jsonl(path).map_err(err)
    }

    /// Writes instruction-tuning JSONL and returns the number of lines.
    fn export_instructions(&self, path: PathBuf, strategy_name: &str) -> PyResult<usize> {
        prompting::export_instruction_dataset(
            &self.inner,
            strategy(strategy_name)?,
            self.inner.track(),
            path,
        )
        .map_err(err)
    }

    /// Runs the gold-echo mock through the inference runner.
    #[pyo3(signature = (strategy_name, concurrency=1))]
    fn infer_echo(
        &self,
        py: Python<'_>,
        strategy_name: &str,
        concurrency: usize,
    ) -> PyResult<Vec<(String, Values)>> {
        let mut opts = InferenceOptions::new(strategy(strategy_name)?, self.inner.track());
        opts.concurrency = concurrency.max(1);
        let d = &self.inner;
        let out = py
            .detach(|| {
                let backend = EchoGoldBackend::from_dataset(d);
                backend::run_inference(d, &backend, &GenerationConfig::default(), &opts)
            })
            .map_err(err)?;
        Ok(out
            .predictions
            .iter()
            .map(|(id, a)| (id.clone(), to_values(a)))
            .collect())
    }
}

/// System prompt listing `labels`.
#[pyfunction]
fn render_system(labels: Vec<String>, track_name: &str) -> PyResult<String> {
    let t = track(track_name)?;
    let schema = LabelSchema::new(labels, t).map_err(err)?;
    Ok(prompting::render_system(&schema, t))
}

/// Prompt dicts (`system`, `user`, `assistant`, `target_label`) for one
/// sentence; `assistant` is filled when `gold` is given.
#[pyfunction]
#[pyo3(signature = (labels, track_name, strategy_name, text, gold=None))]
fn render_prompts(
    labels: Vec<String>,
    track_name: &str,
    strategy_name: &str,
    text: &str,
    gold: Option<HashMap<String, u8>>,
) -> PyResult<Vec<BTreeMap<String, Option<String>>>> {
    let t = track(track_name)?;
    let schema = LabelSchema::new(labels.clone(), t).map_err(err)?;
    let gold = gold.map(|g| assignment(&labels, t, &g)).transpose()?;
    let with_gold = gold.is_some();
    let sample = corpus::Sample::new("sample", "und", text, gold).map_err(err)?;
    let prompts =
        prompting::render_prompts(&schema, &sample, strategy(strategy_name)?, t, with_gold)
            .map_err(err)?;
    Ok(prompts
        .into_iter()
        .map(|p| {
            BTreeMap::from([
                ("system".to_string(), Some(p.system)),
                ("user".to_string(), Some(p.user)),
                ("assistant".to_string(), p.assistant),
                ("target_label".to_string(), p.target_label),
            ])
        })
        .collect())
}

/// Canonical assistant text for `values`.
#[pyfunction]
#[pyo3(signature = (labels, track_name, strategy_name, values, target=None))]
fn render_completion(
    labels: Vec<String>,
    track_name: &str,
    strategy_name: &str,
    values: HashMap<String, u8>,
    target: Option<&str>,
) -> PyResult<String> {
    let t = track(track_name)?;
    let a = assignment(&labels, t, &values)?;
    prompting::render_completion(&a, t, strategy(strategy_name)?, target).map_err(err)
}

/// Parses model output into `{label: value}` (all labels for base, the
/// target alone for pairwise).
#[pyfunction]
#[pyo3(signature = (text, labels, track_name, strategy_name, target=None))]
fn parse_completion(
    text: &str,
    labels: Vec<String>,
    track_name: &str,
    strategy_name: &str,
    target: Option<&str>,
) -> PyResult<Values> {
    let t = track(track_name)?;
    let schema = LabelSchema::new(labels, t).map_err(err)?;
    let f =
        prompting::parse_completion("sample", text, &schema, t, strategy(strategy_name)?, target)
            .map_err(err)?;
    Ok(f.parsed)
}

#[pyfunction]
fn template_hash() -> String {
    prompting::template_hash()
}

/// Metric report exposed to Python as a dict.
#[derive(IntoPyObject)]
struct Report {
    metric: String,
    aggregate: f64,
    per_label: Vec<(String, f64)>,
    n_samples: usize,
    degenerate_labels: Vec<String>,
}

impl From<MetricsReport> for Report {
    fn from(r: MetricsReport) -> Self {
        Self {
            metric: r.metric,
            aggregate: r.aggregate,
            per_label: r.per_label.into_iter().collect(),
            n_samples: r.n_samples,
            degenerate_labels: r.degenerate_labels,
        }
    }
}

/// Macro-F1 report.
#[pyfunction]
fn macro_f1(
    preds: Vec<(String, HashMap<String, u8>)>,
    golds: Vec<(String, HashMap<String, u8>)>,
    labels: Vec<String>,
) -> PyResult<Report> {
    let schema = LabelSchema::new(labels.clone(), Track::A).map_err(err)?;
    let r = eval::macro_f1(
        &rows(&labels, Track::A, &preds)?,
        &rows(&labels, Track::A, &golds)?,
        &schema,
    )
    .map_err(err)?;
    Ok(r.into())
}

/// Pearson report; `mode` is `per-emotion` or `flattened`.
#[pyfunction]
#[pyo3(signature = (preds, golds, labels, mode="per-emotion"))]
fn pearson_score(
    preds: Vec<(String, HashMap<String, u8>)>,
    golds: Vec<(String, HashMap<String, u8>)>,
    labels: Vec<String>,
    mode: &str,
) -> PyResult<Report> {
    let mode = match mode {
        "per-emotion" => PearsonMode::PerEmotion,
        "flattened" => PearsonMode::Flattened,
        other => return Err(err(format!("unknown pearson mode `{other}`"))),
    };
    let schema = LabelSchema::new(labels.clone(), Track::B).map_err(err)?;
    let r = eval::pearson_score(
        &rows(&labels, Track::B, &preds)?,
        &rows(&labels, Track::B, &golds)?,
        &schema,
        mode,
    )
    .map_err(err)?;
    Ok(r.into())
}

/// Probability of "yes" from first-token `(token, logprob)` alternatives.
#[pyfunction]
fn pairwise_yes_probability(alternatives: Vec<(String, f64)>) -> PyResult<f64> {
    let c = Completion {
        text: String::new(),
        first_token_alternatives: Some(alternatives),
    };
    c.validate().map_err(err)?;
    backend::pairwise_yes_probability(&c).map_err(err)
}

/// `{gold emotion count: (base_better, pairwise_better, tie)}`.
#[pyfunction]
fn improvement_distribution(
    base: Vec<(String, HashMap<String, u8>)>,
    pairwise: Vec<(String, HashMap<String, u8>)>,
    golds: Vec<(String, HashMap<String, u8>)>,
    labels: Vec<String>,
    track_name: &str,
) -> PyResult<BTreeMap<usize, (usize, usize, usize)>> {
    let t = track(track_name)?;
    let h = core_improvement(
        &rows(&labels, t, &base)?,
        &rows(&labels, t, &pairwise)?,
        &rows(&labels, t, &golds)?,
    )
    .map_err(err)?;
    Ok(h.buckets
        .into_iter()
        .map(|(k, c)| (k, (c.base_better, c.pairwise_better, c.tie)))
        .collect())
}

/// Hashed character n-gram features.
#[pyfunction]
#[pyo3(signature = (text, dim=512, seed=0))]
fn featurize(text: &str, dim: usize, seed: u64) -> PyResult<Vec<f64>> {
    if dim == 0 {
        return Err(err("dim must be positive"));
    }
    Ok(features::featurize(text, dim, seed).as_slice().to_vec())
}

/// Trained classification head over hashed n-gram features.
#[pyclass(module = "emodetect", frozen)]
struct Head {
    ckpt: HeadCheckpoint,
}

#[pymethods]
impl Head {
    #[staticmethod]
    #[pyo3(signature = (train, dev, feature_dim=512, seed=0, epochs=6, learning_rate=3e-4, batch_size=8))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        train: &Dataset,
        dev: &Dataset,
        feature_dim: usize,
        seed: u64,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
    ) -> PyResult<Self> {
        let cfg = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let provider = HashedNgramFeaturizer::new(feature_dim, seed);
        let trained = py
            .detach(|| head::train_head(&train.inner, &dev.inner, &provider, &cfg))
            .map_err(err)?;
        Ok(Self {
            ckpt: HeadCheckpoint::new(train.inner.schema(), provider.describe(), &cfg, &trained),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            ckpt: HeadCheckpoint::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(path).map_err(err)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.ckpt.labels.clone()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.ckpt.best_epoch
    }

    /// `(epoch, train_loss, dev_macro_f1)` per epoch.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64)> {
        self.ckpt
            .history
            .iter()
            .map(|r| (r.epoch, r.train_loss, r.dev_macro_f1))
            .collect()
    }

    /// Label probabilities for one sentence.
    fn probabilities(&self, text: &str) -> PyResult<Vec<f64>> {
        let features::FeatureSpec::HashedNgram { dim, seed } = self.ckpt.features else {
            return Err(err("only hashed n-gram heads can be evaluated from Python"));
        };
        let h = features::featurize(text, dim, seed);
        head::head_forward(&self.ckpt.params().map_err(err)?, &h).map_err(err)
    }

    fn predict(&self, data: &Dataset) -> PyResult<Vec<(String, Values)>> {
        let features::FeatureSpec::HashedNgram { dim, seed } = self.ckpt.features else {
            return Err(err("only hashed n-gram heads can be evaluated from Python"));
        };
        let provider = HashedNgramFeaturizer::new(dim, seed);
        let preds = head::predict_dataset(
            &self.ckpt.params().map_err(err)?,
            &data.inner,
            &provider,
            self.ckpt.config.threshold,
        )
        .map_err(err)?;
        Ok(preds
            .iter()
            .map(|(id, a)| (id.clone(), to_values(a)))
            .collect())
    }
}

#[pymodule]
fn emodetect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EmodetectError", m.py().get_type::<EmodetectError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Head>()?;
    m.add_function(wrap_pyfunction!(render_system, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(render_completion, m)?)?;
    m.add_function(wrap_pyfunction!(parse_completion, m)?)?;
    m.add_function(wrap_pyfunction!(template_hash, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_score, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_yes_probability, m)?)?;
    m.add_function(wrap_pyfunction!(improvement_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    Ok(())
}
