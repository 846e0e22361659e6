//! Macro-F1 for track A, Pearson correlation for track B, and the
//! per-sample F1 used to compare strategies.
//!
//! Predictions and golds are `(sample id, assignment)` lists. A label that
//! is not a key of a sample's gold assignment is masked for that sample.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, LabelAssignment, LabelSchema, Track};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("sample ids do not line up: {0}")]
    IdMismatch(String),
    #[error("expected track {expected} assignments, found track {found}")]
    TrackMismatch { expected: Track, found: Track },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("predictions line {line}: {msg}")]
    BadPrediction { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PearsonMode {
    /// r per emotion, then the unweighted mean.
    #[default]
    PerEmotion,
    /// One r over all (sample, emotion) values pooled together.
    Flattened,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub track: Track,
    pub metric: String,
    pub per_label: IndexMap<String, f64>,
    pub aggregate: f64,
    pub n_samples: usize,
    pub drop_rate: f64,
    /// Labels scored by a zero-division convention.
    pub degenerate_labels: Vec<String>,
}

impl MetricsReport {
    pub fn with_drop_rate(mut self, drop_rate: f64) -> Self {
        self.drop_rate = drop_rate.clamp(0.0, 1.0);
        self
    }

    /// `label,score,degenerate` rows followed by an `aggregate` row.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "score", "degenerate"])?;
        for (label, score) in &self.per_label {
            let degenerate = self.degenerate_labels.contains(label);
            w.write_record([label.as_str(), &score.to_string(), &degenerate.to_string()])?;
        }
        w.write_record(["aggregate", &self.aggregate.to_string(), "false"])?;
        w.flush()?;
        Ok(())
    }
}

fn align<'a>(
    preds: &'a [(String, LabelAssignment)],
    golds: &'a [(String, LabelAssignment)],
    track: Track,
) -> Result<Vec<(&'a LabelAssignment, &'a LabelAssignment)>, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} predictions for {} gold samples",
            preds.len(),
            golds.len()
        )));
    }
    let by_id: HashMap<&str, &LabelAssignment> =
        preds.iter().map(|(id, a)| (id.as_str(), a)).collect();
    if by_id.len() != preds.len() {
        return Err(EvalError::IdMismatch("duplicate prediction ids".into()));
    }
    golds
        .iter()
        .map(|(id, gold)| {
            let pred = by_id
                .get(id.as_str())
                .ok_or_else(|| EvalError::IdMismatch(format!("no prediction for `{id}`")))?;
            for a in [*pred, gold] {
                if a.track() != track {
                    return Err(EvalError::TrackMismatch {
                        expected: track,
                        found: a.track(),
                    });
                }
            }
            Ok((*pred, gold))
        })
        .collect()
}

fn check_schema(schema: &LabelSchema, expected: Track) -> Result<(), EvalError> {
    if schema.track() != expected {
        return Err(EvalError::TrackMismatch {
            expected,
            found: schema.track(),
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    labels: BTreeMap<String, u8>,
}

/// Writes one `{"id":..,"labels":{..}}` line per prediction.
pub fn write_predictions<W: Write>(
    preds: &[(String, LabelAssignment)],
    mut out: W,
) -> std::io::Result<()> {
    for (id, a) in preds {
        let record = PredictionRecord {
            id: id.clone(),
            labels: a.iter().map(|(l, v)| (l.to_string(), v)).collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads predictions for the samples of `d`, validating each against the
/// sample's own label schema. The result follows the file order.
pub fn read_predictions<R: Read>(
    input: R,
    d: &Dataset,
) -> Result<Vec<(String, LabelAssignment)>, EvalError> {
    let samples: HashMap<&str, _> = d.samples().iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let bad = |msg: String| EvalError::BadPrediction { line: i + 1, msg };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let sample = samples
            .get(rec.id.as_str())
            .ok_or_else(|| bad(format!("unknown sample `{}`", rec.id)))?;
        let a = LabelAssignment::from_pairs(d.schema_for(sample), rec.labels)
            .map_err(|e| bad(e.to_string()))?;
        out.push((rec.id, a));
    }
    Ok(out)
}

/// F1 from confusion counts; 0 when there are no true positives.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Corpus-level per-label F1 averaged without weights over the schema.
pub fn macro_f1(
    preds: &[(String, LabelAssignment)],
    golds: &[(String, LabelAssignment)],
    schema: &LabelSchema,
) -> Result<MetricsReport, EvalError> {
    check_schema(schema, Track::A)?;
    let pairs = align(preds, golds, Track::A)?;
    let mut per_label = IndexMap::new();
    let mut degenerate = Vec::new();
    for label in schema.labels() {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (pred, gold) in &pairs {
            let Some(g) = gold.get(label) else { continue };
            let p = pred.get(label).unwrap_or(0);
            match (p > 0, g > 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        if tp + fp + fn_ == 0 {
            degenerate.push(label.clone());
        }
        per_label.insert(label.clone(), f1_from_counts(tp, fp, fn_));
    }
    let aggregate = per_label.values().sum::<f64>() / per_label.len() as f64;
    Ok(MetricsReport {
        track: Track::A,
        metric: "macro_f1".into(),
        per_label,
        aggregate,
        n_samples: pairs.len(),
        drop_rate: 0.0,
        degenerate_labels: degenerate,
    })
}

/// Pearson r, or `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Predicted and gold values of one label over the samples where it is
/// not masked.
pub(crate) fn label_columns(
    pairs: &[(&LabelAssignment, &LabelAssignment)],
    label: &str,
) -> (Vec<f64>, Vec<f64>) {
    pairs
        .iter()
        .filter_map(|(pred, gold)| {
            gold.get(label)
                .map(|g| (f64::from(pred.get(label).unwrap_or(0)), f64::from(g)))
        })
        .unzip()
}

pub fn pearson_score(
    preds: &[(String, LabelAssignment)],
    golds: &[(String, LabelAssignment)],
    schema: &LabelSchema,
    mode: PearsonMode,
) -> Result<MetricsReport, EvalError> {
    check_schema(schema, Track::B)?;
    let pairs = align(preds, golds, Track::B)?;
    if pairs.len() < 2 {
        return Err(EvalError::TooFewSamples(pairs.len()));
    }
    let mut per_label = IndexMap::new();
    let mut degenerate = Vec::new();
    let (mut all_p, mut all_g) = (Vec::new(), Vec::new());
    for label in schema.labels() {
        let (p, g) = label_columns(&pairs, label);
        let r = if p.len() < 2 { None } else { pearson(&p, &g) };
        if r.is_none() {
            degenerate.push(label.clone());
        }
        per_label.insert(label.clone(), r.unwrap_or(0.0));
        all_p.extend(p);
        all_g.extend(g);
    }
    let aggregate = match mode {
        PearsonMode::PerEmotion => per_label.values().sum::<f64>() / per_label.len() as f64,
        PearsonMode::Flattened => pearson(&all_p, &all_g).unwrap_or(0.0),
    };
    Ok(MetricsReport {
        track: Track::B,
        metric: match mode {
            PearsonMode::PerEmotion => "pearson".into(),
            PearsonMode::Flattened => "pearson_flattened".into(),
        },
        per_label,
        aggregate,
        n_samples: pairs.len(),
        drop_rate: 0.0,
        degenerate_labels: degenerate,
    })
}

/// F1 between the active label sets of one sample (track B values count as
/// active above level 0). Two empty sets agree perfectly.
pub fn per_sample_f1(pred: &LabelAssignment, gold: &LabelAssignment) -> f64 {
    let gold_set: Vec<&str> = gold.active().collect();
    let pred_set: Vec<&str> = pred.active().filter(|l| gold.get(l).is_some()).collect();
    if gold_set.is_empty() && pred_set.is_empty() {
        return 1.0;
    }
    let tp = pred_set.iter().filter(|l| gold_set.contains(l)).count();
    f1_from_counts(tp, pred_set.len() - tp, gold_set.len() - tp)
}
