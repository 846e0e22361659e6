//! Text-generation backends and the corpus-scale inference runner.
//!
//! [`Backend`] is implemented by the OpenAI-style HTTP client in [`http`]
//! and by the deterministic mocks in [`mock`]. [`run_inference`] drives
//! either strategy over a dataset with bounded concurrency.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::PromptInstance;

pub mod http;
pub mod mock;
mod runner;

pub use http::{HttpBackend, RetryPolicy};
pub use mock::{EchoGoldBackend, LexiconBackend};
pub use runner::{run_inference, InferenceOptions, InferenceOutput, LatencySummary, RunStats};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("prompt for `{0}` already carries an assistant turn")]
    AnswerInPrompt(String),
    #[error("backend cannot answer `{0}`")]
    Unanswerable(String),
    #[error("first-token alternatives are absent")]
    NoAlternatives,
    #[error("neither a yes nor a no token among the alternatives")]
    NoYesNoToken,
    #[error("journal error: {0}")]
    Journal(String),
    #[error("prompt error: {0}")]
    Prompt(#[from] crate::prompting::PromptError),
}

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_new_tokens: u32,
    /// 0 means greedy decoding.
    pub temperature: f64,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
    pub want_logprobs: bool,
    /// Alternatives requested for the first generated token.
    pub top_logprobs: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 32,
            temperature: 0.0,
            request_timeout: Duration::from_secs(60),
            want_logprobs: false,
            top_logprobs: 5,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_new_tokens < 1 {
            return Err("max_new_tokens must be at least 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            ));
        }
        if self.want_logprobs && self.top_logprobs < 2 {
            return Err("top_logprobs must be at least 2 when logprobs are requested".into());
        }
        Ok(())
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Generated text plus, optionally, the top alternatives for the first
/// generated token as `(token, log-probability)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub first_token_alternatives: Option<Vec<(String, f64)>>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            first_token_alternatives: None,
        }
    }

    /// Checks that every log-probability is finite and at most 0.
    pub fn validate(&self) -> Result<(), BackendError> {
        if let Some(alts) = &self.first_token_alternatives {
            if let Some((tok, lp)) = alts.iter().find(|(_, lp)| !(lp.is_finite() && *lp <= 0.0)) {
                return Err(BackendError::Malformed(format!(
                    "log-probability {lp} for token `{tok}` is not a finite non-positive number"
                )));
            }
        }
        Ok(())
    }
}

/// A text-generation service. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        prompt: &PromptInstance,
        cfg: &GenerationConfig,
    ) -> Result<Completion, BackendError>;

    /// Retries performed so far, for run statistics.
    fn retries(&self) -> u64 {
        0
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(
        &self,
        prompt: &PromptInstance,
        cfg: &GenerationConfig,
    ) -> Result<Completion, BackendError> {
        (**self).complete(prompt, cfg)
    }

    fn retries(&self) -> u64 {
        (**self).retries()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(
        &self,
        prompt: &PromptInstance,
        cfg: &GenerationConfig,
    ) -> Result<Completion, BackendError> {
        (**self).complete(prompt, cfg)
    }

    fn retries(&self) -> u64 {
        (**self).retries()
    }
}

fn normalize_token(token: &str) -> String {
    // SentencePiece and byte-level BPE word-boundary markers
    token.trim_start_matches(['▁', 'Ġ']).trim().to_lowercase()
}

fn log_sum_exp(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max == f64::NEG_INFINITY {
        return None;
    }
    Some(max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln())
}

/// Probability of "yes" from a two-way softmax over the aggregated first
/// token masses of all yes-variants and all no-variants.
pub fn pairwise_yes_probability(c: &Completion) -> Result<f64, BackendError> {
    let alts = c
        .first_token_alternatives
        .as_ref()
        .ok_or(BackendError::NoAlternatives)?;
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (token, lp) in alts {
        match normalize_token(token).as_str() {
            "yes" => yes.push(*lp),
            "no" => no.push(*lp),
            _ => {}
        }
    }
    match (log_sum_exp(&yes), log_sum_exp(&no)) {
        (None, None) => Err(BackendError::NoYesNoToken),
        (Some(_), None) => Ok(1.0),
        (None, Some(_)) => Ok(0.0),
        // sigmoid of the log-odds, stable for either sign
        (Some(y), Some(n)) => {
            let d = y - n;
            Ok(if d >= 0.0 {
                1.0 / (1.0 + (-d).exp())
            } else {
                let e = d.exp();
                e / (1.0 + e)
            })
        }
    }
}

/// Decision threshold applied to [`pairwise_yes_probability`].
pub const YES_THRESHOLD: f64 = 0.5;
