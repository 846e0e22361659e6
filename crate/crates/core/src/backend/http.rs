//! Client for OpenAI-compatible `POST /v1/chat/completions` services.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, GenerationConfig};
use crate::prompting::PromptInstance;

pub const ENV_ENDPOINT: &str = "EMO_ENDPOINT";
pub const ENV_API_KEY: &str = "EMO_API_KEY";
pub const ENV_MODEL: &str = "EMO_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub top_logprobs: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Choice {
    pub message: ChoiceMessage,
    #[serde(default)]
    pub logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChoiceMessage {
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Option<Vec<TopLogprob>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Wire body for one prompt.
pub fn build_request(prompt: &PromptInstance, cfg: &GenerationConfig, model: &str) -> ChatRequest {
    ChatRequest {
        model: model.to_string(),
        messages: prompt
            .messages()
            .into_iter()
            .map(|m| WireMessage {
                role: m.role.as_str().to_string(),
                content: m.content,
            })
            .collect(),
        temperature: cfg.temperature,
        max_tokens: cfg.max_new_tokens,
        logprobs: cfg.want_logprobs,
        top_logprobs: cfg.want_logprobs.then_some(cfg.top_logprobs),
    }
}

/// Reads the first choice of a response body.
pub fn parse_response(body: &str) -> Result<Completion, BackendError> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Malformed("no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| BackendError::Malformed("choice without content".into()))?;
    let first_token_alternatives = choice
        .logprobs
        .and_then(|l| l.content)
        .and_then(|tokens| tokens.into_iter().next())
        .map(|first| match first.top_logprobs {
            Some(top) if !top.is_empty() => top.into_iter().map(|t| (t.token, t.logprob)).collect(),
            _ => vec![(first.token, first.logprob)],
        });
    let completion = Completion {
        text,
        first_token_alternatives,
    };
    completion.validate()?;
    Ok(completion)
}

/// Exponential backoff: attempt `k` (0-based retry index) waits
/// `min(base * 2^k, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    retries: AtomicU64,
}

enum Failure {
    Retryable(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    /// `endpoint` is either a base URL (`http://host:port` or `.../v1`) or the
    /// full chat-completions URL.
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        model: impl Into<String>,
        retry: RetryPolicy,
    ) -> Result<Self, BackendError> {
        let client =
            reqwest::blocking::Client::builder()
                .build()
                .map_err(|e| BackendError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                })?;
        Ok(Self {
            client,
            url: chat_url(endpoint),
            api_key: api_key.filter(|k| !k.is_empty()),
            model: model.into(),
            retry,
            retries: AtomicU64::new(0),
        })
    }

    /// Reads `EMO_ENDPOINT`, `EMO_API_KEY` and `EMO_MODEL`.
    pub fn from_env(retry: RetryPolicy) -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| BackendError::Transport {
            attempts: 0,
            message: format!("{ENV_ENDPOINT} is not set"),
        })?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        Self::new(&endpoint, std::env::var(ENV_API_KEY).ok(), model, retry)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(
        &self,
        body: &ChatRequest,
        cfg: &GenerationConfig,
        attempt: u32,
    ) -> Result<Completion, Failure> {
        let mut req = self
            .client
            .post(&self.url)
            .timeout(cfg.request_timeout)
            .json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Retryable(BackendError::Timeout { attempts: attempt })
            } else {
                Failure::Retryable(BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            Failure::Retryable(if e.is_timeout() {
                BackendError::Timeout { attempts: attempt }
            } else {
                BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                }
            })
        })?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retryable(BackendError::Transport {
                attempts: attempt,
                message: format!("HTTP {status}"),
            }));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(BackendError::Rejected {
                status: status.as_u16(),
                body: text,
            }));
        }
        parse_response(&text).map_err(Failure::Fatal)
    }
}

fn chat_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        prompt: &PromptInstance,
        cfg: &GenerationConfig,
    ) -> Result<Completion, BackendError> {
        if prompt.assistant.is_some() {
            return Err(BackendError::AnswerInPrompt(prompt.sample_id.clone()));
        }
        let body = build_request(prompt, cfg, &self.model);
        let mut retry = 0;
        loop {
            match self.attempt(&body, cfg, retry + 1) {
                Ok(c) => return Ok(c),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) if retry >= self.retry.max_retries => return Err(e),
                Err(Failure::Retryable(e)) => {
                    log::debug!("retrying {} after: {e}", prompt.request_key());
                    thread::sleep(self.retry.delay(retry));
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    retry += 1;
                }
            }
        }
    }

    fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_forms() {
        assert_eq!(chat_url("http://h:1"), "http://h:1/v1/chat/completions");
        assert_eq!(chat_url("http://h:1/v1/"), "http://h:1/v1/chat/completions");
        assert_eq!(
            chat_url("http://h:1/v1/chat/completions"),
            "http://h:1/v1/chat/completions"
        );
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        let ms: Vec<u128> = (0..4).map(|k| p.delay(k).as_millis()).collect();
        assert_eq!(ms, [100, 200, 350, 350]);
    }

    #[test]
    fn response_without_logprobs() {
        let c = parse_response(r#"{"choices":[{"message":{"content":"fear"},"logprobs":null}]}"#)
            .unwrap();
        assert_eq!(c, Completion::text("fear"));
        assert!(matches!(
            parse_response(r#"{"choices":[]}"#),
            Err(BackendError::Malformed(_))
        ));
        assert!(matches!(
            parse_response("<html>"),
            Err(BackendError::Malformed(_))
        ));
    }
}
