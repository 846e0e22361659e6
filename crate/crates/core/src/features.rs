//! Sentence feature vectors for the classification head.
//!
//! [`HashedNgramFeaturizer`] is a self-contained stand-in for an encoder's
//! sentence vector; [`EmbeddingClient`] fetches real encoder features from a
//! model server's `/v1/embeddings` endpoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature vector contains a non-finite entry")]
    NonFinite,
    #[error("expected dimension {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("embedding service error: {0}")]
    Service(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Source of fixed-dimension sentence features.
pub trait FeatureProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn features(&self, text: &str) -> Result<FeatureVector, FeatureError>;

    fn features_batch(&self, texts: &[&str]) -> Result<Vec<FeatureVector>, FeatureError> {
        texts.iter().map(|t| self.features(t)).collect()
    }

    /// Identifies the provider in checkpoints.
    fn describe(&self) -> FeatureSpec;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureSpec {
    HashedNgram { dim: usize, seed: u64 },
    Embeddings { endpoint: String, dim: usize },
}

const NGRAM_SIZES: [usize; 3] = [2, 3, 4];
const BOUNDARY_START: char = '\u{2}';
const BOUNDARY_END: char = '\u{3}';

/// Signed hashed bag of character 2-, 3- and 4-grams over the NFC-normalized,
/// lowercased text (padded with boundary markers), L2-normalized.
///
/// Empty text maps to the zero vector.
pub fn featurize(text: &str, dim: usize, seed: u64) -> FeatureVector {
    assert!(dim >= 1, "feature dimension must be positive");
    let mut v = vec![0.0; dim];
    if text.is_empty() {
        return FeatureVector(v);
    }
    let chars: Vec<char> = std::iter::once(BOUNDARY_START)
        .chain(text.nfc().flat_map(char::to_lowercase))
        .chain(std::iter::once(BOUNDARY_END))
        .collect();
    let mut gram = String::new();
    for n in NGRAM_SIZES {
        for window in chars.windows(n) {
            gram.clear();
            gram.extend(window);
            let h = XxHash64::oneshot(seed, gram.as_bytes());
            let idx = (h % dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    FeatureVector(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramFeaturizer {
    pub dim: usize,
    pub seed: u64,
}

impl HashedNgramFeaturizer {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl FeatureProvider for HashedNgramFeaturizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, text: &str) -> Result<FeatureVector, FeatureError> {
        Ok(featurize(text, self.dim, self.seed))
    }

    fn describe(&self) -> FeatureSpec {
        FeatureSpec::HashedNgram {
            dim: self.dim,
            seed: self.seed,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

/// Advertised by `GET /capabilities`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub embedding_dim: usize,
    #[serde(default)]
    pub model: Option<String>,
}

/// Encoder features from a model server.
pub struct EmbeddingClient {
    client: reqwest::blocking::Client,
    base: String,
    dim: usize,
    batch_size: usize,
}

impl EmbeddingClient {
    /// Connects and reads the advertised dimension from `/capabilities`.
    pub fn connect(endpoint: &str) -> Result<Self, FeatureError> {
        let client = reqwest::blocking::Client::new();
        let base = endpoint
            .trim_end_matches('/')
            .trim_end_matches("/v1")
            .to_string();
        let caps: Capabilities = client
            .get(format!("{base}/capabilities"))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| FeatureError::Service(e.to_string()))?
            .json()
            .map_err(|e| FeatureError::Service(e.to_string()))?;
        Ok(Self {
            client,
            base,
            dim: caps.embedding_dim,
            batch_size: 64,
        })
    }
}

impl FeatureProvider for EmbeddingClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, text: &str) -> Result<FeatureVector, FeatureError> {
        let mut out = self.features_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn features_batch(&self, texts: &[&str]) -> Result<Vec<FeatureVector>, FeatureError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: EmbeddingResponse = self
                .client
                .post(format!("{}/v1/embeddings", self.base))
                .json(&EmbeddingRequest { input: chunk })
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| FeatureError::Service(e.to_string()))?
                .json()
                .map_err(|e| FeatureError::Service(e.to_string()))?;
            if resp.data.len() != chunk.len() {
                return Err(FeatureError::Service(format!(
                    "{} embeddings for {} inputs",
                    resp.data.len(),
                    chunk.len()
                )));
            }
            for item in resp.data {
                if item.embedding.len() != self.dim {
                    return Err(FeatureError::Dimension {
                        expected: self.dim,
                        found: item.embedding.len(),
                    });
                }
                out.push(FeatureVector::new(item.embedding)?);
            }
        }
        Ok(out)
    }

    fn describe(&self) -> FeatureSpec {
        FeatureSpec::Embeddings {
            endpoint: self.base.clone(),
            dim: self.dim,
        }
    }
}
