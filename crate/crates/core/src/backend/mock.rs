//! Deterministic in-process backends.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Backend, BackendError, Completion, GenerationConfig};
use crate::corpus::{Dataset, IntensityLevel, LabelAssignment, Track};
use crate::prompting::{
    prompt_labels, prompt_sentence, render_completion, PromptInstance, Strategy,
};

fn yes_no_alternatives(yes: bool) -> Vec<(String, f64)> {
    let (p_yes, p_no) = if yes { (0.9f64, 0.1f64) } else { (0.1, 0.9) };
    vec![("yes".into(), p_yes.ln()), ("no".into(), p_no.ln())]
}

fn with_alternatives(prompt: &PromptInstance, cfg: &GenerationConfig, text: String) -> Completion {
    let first_token_alternatives =
        (cfg.want_logprobs && prompt.strategy == Strategy::Pairwise && prompt.track == Track::A)
            .then(|| yes_no_alternatives(text == "yes"));
    Completion {
        text,
        first_token_alternatives,
    }
}

/// Answers every prompt with the rendered gold completion of its sample.
pub struct EchoGoldBackend {
    golds: HashMap<String, LabelAssignment>,
    requests: AtomicUsize,
}

impl EchoGoldBackend {
    pub fn from_dataset(d: &Dataset) -> Self {
        Self {
            golds: d.golds().into_iter().collect(),
            requests: AtomicUsize::new(0),
        }
    }

    /// Requests served so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Backend for EchoGoldBackend {
    fn complete(
        &self,
        prompt: &PromptInstance,
        cfg: &GenerationConfig,
    ) -> Result<Completion, BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        if prompt.assistant.is_some() {
            return Err(BackendError::AnswerInPrompt(prompt.sample_id.clone()));
        }
        let gold = self
            .golds
            .get(&prompt.sample_id)
            .ok_or_else(|| BackendError::Unanswerable(prompt.sample_id.clone()))?;
        let text = render_completion(
            gold,
            prompt.track,
            prompt.strategy,
            prompt.target_label.as_deref(),
        )?;
        Ok(with_alternatives(prompt, cfg, text))
    }
}

/// Keyword matcher: an emotion is expressed when any of its keywords occurs
/// in the sentence (case-insensitive). Under track B the intensity is the
/// number of distinct matching keywords, capped at `high`.
pub struct LexiconBackend {
    lexicon: BTreeMap<String, Vec<String>>,
    requests: AtomicUsize,
}

impl LexiconBackend {
    pub fn new(lexicon: BTreeMap<String, Vec<String>>) -> Self {
        let lexicon = lexicon
            .into_iter()
            .map(|(e, kws)| {
                (
                    e.to_lowercase(),
                    kws.into_iter().map(|k| k.to_lowercase()).collect(),
                )
            })
            .collect();
        Self {
            lexicon,
            requests: AtomicUsize::new(0),
        }
    }

    /// Reads a JSON object mapping each emotion to a list of keywords.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BackendError::Unanswerable(format!("{}: {e}", path.as_ref().display())))?;
        let lexicon =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        Ok(Self::new(lexicon))
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn level(&self, emotion: &str, sentence: &str) -> u8 {
        self.lexicon
            .get(emotion)
            .map(|kws| {
                kws.iter()
                    .filter(|k| sentence.contains(k.as_str()))
                    .count()
                    .min(3) as u8
            })
            .unwrap_or(0)
    }
}

impl Backend for LexiconBackend {
    fn complete(
        &self,
        prompt: &PromptInstance,
        cfg: &GenerationConfig,
    ) -> Result<Completion, BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        if prompt.assistant.is_some() {
            return Err(BackendError::AnswerInPrompt(prompt.sample_id.clone()));
        }
        let sentence = prompt_sentence(&prompt.user)
            .ok_or_else(|| BackendError::Unanswerable(prompt.sample_id.clone()))?
            .to_lowercase();
        let text = match prompt.strategy {
            Strategy::Base => {
                let parts: Vec<String> = prompt_labels(&prompt.system)
                    .into_iter()
                    .filter_map(|emotion| {
                        let level = self.level(emotion, &sentence);
                        (level > 0).then(|| match prompt.track {
                            Track::A => emotion.to_string(),
                            Track::B => format!(
                                "{} degree of {emotion}",
                                IntensityLevel::from_value(level)
                                    .expect("capped at 3")
                                    .name()
                            ),
                        })
                    })
                    .collect();
                if parts.is_empty() {
                    "none".to_string()
                } else {
                    parts.join(", ")
                }
            }
            Strategy::Pairwise => {
                let target = prompt
                    .target_label
                    .as_deref()
                    .ok_or_else(|| BackendError::Unanswerable(prompt.sample_id.clone()))?;
                let level = self.level(target, &sentence);
                match prompt.track {
                    Track::A => if level > 0 { "yes" } else { "no" }.to_string(),
                    Track::B => IntensityLevel::from_value(level)
                        .expect("capped at 3")
                        .name()
                        .to_string(),
                }
            }
        };
        Ok(with_alternatives(prompt, cfg, text))
    }
}
