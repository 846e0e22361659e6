//! Multi-label classification head `sigmoid(tanh(h · W_h) · W_o)` over
//! sentence features, trained with masked binary cross-entropy and AdamW.
//!
//! There are no bias terms. Matrices are row-major `f64`; every reduction
//! runs in a fixed order so training is bit-reproducible for a seed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, LabelAssignment, LabelSchema, Track};
use crate::eval::macro_f1;
use crate::features::{FeatureError, FeatureProvider, FeatureSpec, FeatureVector};

pub const LOSS_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every label is masked")]
    AllMasked,
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("train and dev schemas differ")]
    SchemaMismatch,
    #[error("the classification head only supports track A")]
    UnsupportedTrack,
    #[error("sample `{0}` has no gold labels")]
    Unlabeled(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("evaluation error: {0}")]
    Eval(#[from] crate::eval::EvalError),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, HeadError> {
        if data.len() != rows * cols {
            return Err(HeadError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Xavier/Glorot uniform in `(-a, a)`, `a = sqrt(6 / (rows + cols))`.
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// Row vector times matrix.
    fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// The two weight matrices of the head: `W_h` is `d x m`, `W_o` is `m x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w_h: Matrix,
    pub w_o: Matrix,
}

impl HeadParams {
    pub fn new(w_h: Matrix, w_o: Matrix) -> Result<Self, HeadError> {
        if w_h.cols != w_o.rows {
            return Err(HeadError::Shape(format!(
                "W_h is {}x{} but W_o is {}x{}",
                w_h.rows, w_h.cols, w_o.rows, w_o.cols
            )));
        }
        if !(w_h.is_finite() && w_o.is_finite()) {
            return Err(HeadError::Shape("non-finite weight".into()));
        }
        Ok(Self { w_h, w_o })
    }

    pub fn zeros(dim: usize, hidden: usize, labels: usize) -> Self {
        Self {
            w_h: Matrix::zeros(dim, hidden),
            w_o: Matrix::zeros(hidden, labels),
        }
    }

    pub fn init(dim: usize, hidden: usize, labels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_h = Matrix::xavier(dim, hidden, &mut rng);
        let w_o = Matrix::xavier(hidden, labels, &mut rng);
        Self { w_h, w_o }
    }

    pub fn feature_dim(&self) -> usize {
        self.w_h.rows
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols
    }

    pub fn num_labels(&self) -> usize {
        self.w_o.cols
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Activations {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn forward(p: &HeadParams, h: &[f64]) -> Result<Activations, HeadError> {
    if h.len() != p.feature_dim() {
        return Err(HeadError::Shape(format!(
            "feature vector of dimension {} for a head expecting {}",
            h.len(),
            p.feature_dim()
        )));
    }
    let hidden: Vec<f64> = p.w_h.left_mul(h).into_iter().map(f64::tanh).collect();
    let probs = p.w_o.left_mul(&hidden).into_iter().map(sigmoid).collect();
    Ok(Activations { hidden, probs })
}

/// Per-label probabilities for one feature vector.
pub fn head_forward(p: &HeadParams, h: &FeatureVector) -> Result<Vec<f64>, HeadError> {
    forward(p, h.as_slice()).map(|a| a.probs)
}

fn check_targets(probs: &[f64], gold: &[f64], mask: Option<&[bool]>) -> Result<usize, HeadError> {
    if probs.len() != gold.len() || mask.is_some_and(|m| m.len() != gold.len()) {
        return Err(HeadError::Shape(format!(
            "{} probabilities for {} targets",
            probs.len(),
            gold.len()
        )));
    }
    let active = mask.map_or(gold.len(), |m| m.iter().filter(|&&b| b).count());
    if active == 0 {
        return Err(HeadError::AllMasked);
    }
    Ok(active)
}

/// Mean binary cross-entropy over unmasked labels (`mask[k] == true` keeps
/// label `k`), with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(probs: &[f64], gold: &[f64], mask: Option<&[bool]>) -> Result<f64, HeadError> {
    let active = check_targets(probs, gold, mask)?;
    let mut total = 0.0;
    for k in 0..probs.len() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let p = probs[k].clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
        let y = gold[k];
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / active as f64)
}

/// Gradients with respect to both weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w_h: Matrix,
    pub w_o: Matrix,
}

impl HeadGrads {
    fn zeros_like(p: &HeadParams) -> Self {
        Self {
            w_h: Matrix::zeros(p.w_h.rows, p.w_h.cols),
            w_o: Matrix::zeros(p.w_o.rows, p.w_o.cols),
        }
    }

    fn add_scaled(&mut self, other: &HeadGrads, scale: f64) {
        for (a, b) in self.w_h.data.iter_mut().zip(&other.w_h.data) {
            *a += scale * b;
        }
        for (a, b) in self.w_o.data.iter_mut().zip(&other.w_o.data) {
            *a += scale * b;
        }
    }
}

/// Loss and analytic gradients of [`bce_loss`] composed with [`head_forward`].
pub fn head_loss_and_gradients(
    p: &HeadParams,
    h: &FeatureVector,
    gold: &[f64],
    mask: Option<&[bool]>,
) -> Result<(f64, HeadGrads), HeadError> {
    let h = h.as_slice();
    let act = forward(p, h)?;
    let active = check_targets(&act.probs, gold, mask)? as f64;
    let loss = bce_loss(&act.probs, gold, mask)?;

    // dL/dz_k for the output pre-activations; zero where masked or clamped
    let delta: Vec<f64> = (0..act.probs.len())
        .map(|k| {
            let prob = act.probs[k];
            if mask.is_some_and(|m| !m[k]) || !(LOSS_EPSILON..=1.0 - LOSS_EPSILON).contains(&prob) {
                0.0
            } else {
                (prob - gold[k]) / active
            }
        })
        .collect();

    let mut grads = HeadGrads::zeros_like(p);
    let (m, k_out) = (p.hidden_dim(), p.num_labels());
    let mut d_pre = vec![0.0; m];
    for (j, (pre, &t)) in d_pre.iter_mut().zip(&act.hidden).enumerate() {
        let mut back = 0.0;
        for (k, &dk) in delta.iter().enumerate() {
            *grads.w_o.get_mut(j, k) = t * dk;
            back += p.w_o.get(j, k) * dk;
        }
        *pre = back * (1.0 - t * t);
    }
    debug_assert_eq!(grads.w_o.cols, k_out);
    for (i, &x) in h.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &dj) in d_pre.iter().enumerate() {
            *grads.w_h.get_mut(i, j) = x * dj;
        }
    }
    Ok((loss, grads))
}

pub fn head_gradients(
    p: &HeadParams,
    h: &FeatureVector,
    gold: &[f64],
    mask: Option<&[bool]>,
) -> Result<HeadGrads, HeadError> {
    head_loss_and_gradients(p, h, gold, mask).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Hidden width `m`; the feature dimension when unset.
    pub hidden_dim: Option<usize>,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            epochs: 6,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            seed: 0,
            hidden_dim: None,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    // negated comparisons so that NaN fails every check
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), HeadError> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0) {
            problems.push("learning_rate must be positive");
        }
        if self.epochs < 1 {
            problems.push("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("betas must lie in [0, 1)");
        }
        if self.hidden_dim == Some(0) {
            problems.push("hidden_dim must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HeadError::Config(problems.join("; ")))
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: HeadGrads,
    v: HeadGrads,
    pub step: u64,
}

impl AdamState {
    pub fn new(p: &HeadParams) -> Self {
        Self {
            m: HeadGrads::zeros_like(p),
            v: HeadGrads::zeros_like(p),
            step: 0,
        }
    }
}

fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &TrainConfig,
    bias1: f64,
    bias2: f64,
) {
    let lr = cfg.learning_rate;
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * params[i]);
    }
}

/// One AdamW step with bias-corrected moments and decoupled weight decay.
pub fn adamw_step(
    p: &mut HeadParams,
    grads: &HeadGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), HeadError> {
    if grads.w_h.data.len() != p.w_h.data.len() || grads.w_o.data.len() != p.w_o.data.len() {
        return Err(HeadError::Shape(
            "gradient shapes differ from parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    adamw_update(
        &mut p.w_h.data,
        &grads.w_h.data,
        &mut state.m.w_h.data,
        &mut state.v.w_h.data,
        cfg,
        bias1,
        bias2,
    );
    adamw_update(
        &mut p.w_o.data,
        &grads.w_o.data,
        &mut state.m.w_o.data,
        &mut state.v.w_o.data,
        cfg,
        bias1,
        bias2,
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedHead {
    pub params: HeadParams,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Gold targets and mask of one sample over the union schema.
fn targets(schema: &LabelSchema, gold: &LabelAssignment) -> (Vec<f64>, Vec<bool>) {
    schema
        .labels()
        .iter()
        .map(|l| match gold.get(l) {
            Some(v) => (f64::from(u8::from(v > 0)), true),
            None => (0.0, false),
        })
        .unzip()
}

fn check_dataset(d: &Dataset) -> Result<(), HeadError> {
    if d.track() != Track::A {
        return Err(HeadError::UnsupportedTrack);
    }
    match d.samples().iter().find(|s| s.gold.is_none()) {
        Some(s) => Err(HeadError::Unlabeled(s.id.clone())),
        None => Ok(()),
    }
}

fn dataset_features<F: FeatureProvider + ?Sized>(
    d: &Dataset,
    provider: &F,
) -> Result<Vec<FeatureVector>, HeadError> {
    let texts: Vec<&str> = d.samples().iter().map(|s| s.text.as_str()).collect();
    Ok(provider.features_batch(&texts)?)
}

/// Mini-batch AdamW training that keeps the epoch with the best dev
/// macro-F1 (earliest on ties).
pub fn train_head<F: FeatureProvider + ?Sized>(
    train: &Dataset,
    dev: &Dataset,
    provider: &F,
    cfg: &TrainConfig,
) -> Result<TrainedHead, HeadError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(HeadError::EmptyTrainSet);
    }
    if train.schema() != dev.schema() {
        return Err(HeadError::SchemaMismatch);
    }
    check_dataset(train)?;
    check_dataset(dev)?;
    let schema = train.schema();

    let train_x = dataset_features(train, provider)?;
    let train_y: Vec<(Vec<f64>, Vec<bool>)> = train
        .samples()
        .iter()
        .map(|s| targets(schema, s.gold.as_ref().expect("checked")))
        .collect();
    let dev_x = dataset_features(dev, provider)?;
    let dev_gold = dev.golds();

    let dim = provider.dim();
    let hidden = cfg.hidden_dim.unwrap_or(dim);
    let mut params = HeadParams::init(dim, hidden, schema.len(), cfg.seed);
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, HeadParams)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = HeadGrads::zeros_like(&params);
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            let mut used = 0usize;
            for &i in batch {
                let (gold, mask) = &train_y[i];
                match head_loss_and_gradients(&params, &train_x[i], gold, Some(mask)) {
                    Ok((loss, g)) => {
                        batch_loss += loss;
                        grads.add_scaled(&g, scale);
                        used += 1;
                    }
                    Err(HeadError::AllMasked) => {}
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                continue;
            }
            adamw_step(&mut params, &grads, &mut state, cfg)?;
            loss_sum += batch_loss / used as f64;
            batches += 1;
        }
        let preds = predict_features(&params, dev, &dev_x, cfg.threshold)?;
        let dev_f1 = if dev.is_empty() {
            0.0
        } else {
            macro_f1(&preds, &dev_gold, schema)?.aggregate
        };
        history.push(EpochRecord {
            epoch,
            train_loss: if batches == 0 {
                0.0
            } else {
                loss_sum / batches as f64
            },
            dev_macro_f1: dev_f1,
        });
        if best.as_ref().is_none_or(|(f, _, _)| dev_f1 > *f) {
            best = Some((dev_f1, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainedHead {
        params,
        history,
        best_epoch,
    })
}

/// Labels whose probability reaches `threshold`, over `schema`.
pub fn head_predict(
    p: &HeadParams,
    schema: &LabelSchema,
    h: &FeatureVector,
    threshold: f64,
) -> Result<LabelAssignment, HeadError> {
    if schema.track() != Track::A {
        return Err(HeadError::UnsupportedTrack);
    }
    if schema.len() != p.num_labels() {
        return Err(HeadError::Shape(format!(
            "head has {} outputs for a schema of {} labels",
            p.num_labels(),
            schema.len()
        )));
    }
    let probs = head_forward(p, h)?;
    let active = schema
        .labels()
        .iter()
        .zip(&probs)
        .filter(|(_, &prob)| prob >= threshold)
        .map(|(l, _)| l.as_str());
    LabelAssignment::with_active(schema, active, 1).map_err(|e| HeadError::Shape(e.to_string()))
}

fn predict_features(
    p: &HeadParams,
    d: &Dataset,
    features: &[FeatureVector],
    threshold: f64,
) -> Result<Vec<(String, LabelAssignment)>, HeadError> {
    let union = d.schema();
    d.samples()
        .iter()
        .zip(features)
        .map(|(s, h)| {
            let full = head_predict(p, union, h, threshold)?;
            let native = d.schema_for(s);
            let active = full.active().filter(|l| native.contains(l));
            let a = LabelAssignment::with_active(native, active, 1).expect("native labels");
            Ok((s.id.clone(), a))
        })
        .collect()
}

/// Predictions for every sample, restricted to each sample's native labels.
pub fn predict_dataset<F: FeatureProvider + ?Sized>(
    p: &HeadParams,
    d: &Dataset,
    provider: &F,
    threshold: f64,
) -> Result<Vec<(String, LabelAssignment)>, HeadError> {
    if d.track() != Track::A {
        return Err(HeadError::UnsupportedTrack);
    }
    let features = dataset_features(d, provider)?;
    predict_features(p, d, &features, threshold)
}

/// Serialized head: weights plus everything needed to rebuild features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCheckpoint {
    pub labels: Vec<String>,
    pub features: FeatureSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_labels: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Row-major `feature_dim x hidden_dim`.
    pub w_h: Vec<f64>,
    /// Row-major `hidden_dim x num_labels`.
    pub w_o: Vec<f64>,
}

impl HeadCheckpoint {
    pub fn new(
        schema: &LabelSchema,
        features: FeatureSpec,
        config: &TrainConfig,
        trained: &TrainedHead,
    ) -> Self {
        let p = &trained.params;
        Self {
            labels: schema.labels().to_vec(),
            features,
            config: config.clone(),
            seed: config.seed,
            feature_dim: p.feature_dim(),
            hidden_dim: p.hidden_dim(),
            num_labels: p.num_labels(),
            best_epoch: trained.best_epoch,
            history: trained.history.clone(),
            w_h: p.w_h.data.clone(),
            w_o: p.w_o.data.clone(),
        }
    }

    pub fn params(&self) -> Result<HeadParams, HeadError> {
        HeadParams::new(
            Matrix::from_rows(self.feature_dim, self.hidden_dim, self.w_h.clone())?,
            Matrix::from_rows(self.hidden_dim, self.num_labels, self.w_o.clone())?,
        )
    }

    pub fn schema(&self) -> Result<LabelSchema, HeadError> {
        LabelSchema::new(self.labels.clone(), Track::A)
            .map_err(|e| HeadError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HeadError> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| HeadError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| HeadError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HeadError> {
        let text = fs::read_to_string(path).map_err(|e| HeadError::Checkpoint(e.to_string()))?;
        let ckpt: Self =
            serde_json::from_str(&text).map_err(|e| HeadError::Checkpoint(e.to_string()))?;
        ckpt.params()?;
        if ckpt.labels.len() != ckpt.num_labels {
            return Err(HeadError::Checkpoint(
                "label count differs from output width".into(),
            ));
        }
        Ok(ckpt)
    }
}
