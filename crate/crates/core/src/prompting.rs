//! Instruction prompts, gold completions and completion parsing for the
//! `base` and `pairwise` strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, IntensityLevel, LabelAssignment, LabelSchema, Sample, Track};

/// Bumped whenever any template string below changes.
pub const TEMPLATE_VERSION: u32 = 1;

const SYSTEM_HEAD: &str = "You are an expert in analyzing the emotions expressed in a natural sentence. The emotional label set includes {";
const SYSTEM_INTENSITY: &str = ", with three levels of intensity: low, moderate, and high";
const SYSTEM_TAIL: &str = ". Each sentence may have one or more emotional labels, or none at all.";
const USER_HEAD: &str = "Given the sentence: \"";
const BASE_A_QUESTION: &str = "\", which emotions are expressed in it?";
const BASE_B_QUESTION: &str =
    "\", which emotions and their corresponding intensities are expressed in it?";
const NONE: &str = "none";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("sample `{0}` has no gold labels")]
    MissingGold(String),
    #[error("sample `{0}` has empty text")]
    EmptyText(String),
    #[error("pairwise rendering needs a target label")]
    MissingTarget,
    #[error("target label `{0}` is not in the schema")]
    UnknownTarget(String),
    #[error("duplicate fragment for label `{0}`")]
    DuplicateFragment(String),
    #[error("assignment error: {0}")]
    Assignment(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Completion parse failures. Each variant carries the offending text.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("malformed degree phrase `{0}`")]
    MalformedDegreePhrase(String),
    #[error("unrecognized answer `{0}`")]
    UnrecognizedAnswer(String),
    #[error("pairwise parsing needs a target label in the schema, got `{0}`")]
    BadTarget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Base,
    Pairwise,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Base => "base",
            Strategy::Pairwise => "pairwise",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(Strategy::Base),
            "pairwise" => Ok(Strategy::Pairwise),
            other => Err(format!(
                "unknown strategy `{other}` (expected base or pairwise)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// A system/user(/assistant) instruction prompt for one sample, or for one
/// (sample, emotion) pair under the pairwise strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub sample_id: String,
    pub strategy: Strategy,
    pub track: Track,
    pub system: String,
    pub user: String,
    pub assistant: Option<String>,
    pub target_label: Option<String>,
}

impl PromptInstance {
    /// Messages in role order; the assistant turn only when present.
    pub fn messages(&self) -> Vec<Message> {
        let mut out = vec![
            Message {
                role: Role::System,
                content: self.system.clone(),
            },
            Message {
                role: Role::User,
                content: self.user.clone(),
            },
        ];
        if let Some(a) = &self.assistant {
            out.push(Message {
                role: Role::Assistant,
                content: a.clone(),
            });
        }
        out
    }

    /// The prompt without its assistant turn, as sent at inference time.
    pub fn without_answer(&self) -> PromptInstance {
        PromptInstance {
            assistant: None,
            ..self.clone()
        }
    }

    /// Key identifying this request within a run.
    pub fn request_key(&self) -> String {
        match &self.target_label {
            Some(t) => format!("{}\u{1f}{t}", self.sample_id),
            None => self.sample_id.clone(),
        }
    }
}

/// Labels constrained by one parsed completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionFragment {
    pub sample_id: String,
    pub target_label: Option<String>,
    pub parsed: BTreeMap<String, u8>,
}

pub fn render_system(schema: &LabelSchema, track: Track) -> String {
    let mut s = String::from(SYSTEM_HEAD);
    s.push_str(&schema.labels().join(", "));
    s.push('}');
    if track == Track::B {
        s.push_str(SYSTEM_INTENSITY);
    }
    s.push_str(SYSTEM_TAIL);
    s
}

fn user_base(text: &str, track: Track) -> String {
    let question = match track {
        Track::A => BASE_A_QUESTION,
        Track::B => BASE_B_QUESTION,
    };
    format!("{USER_HEAD}{text}{question}")
}

fn user_pairwise(text: &str, track: Track, label: &str) -> String {
    match track {
        Track::A => format!("{USER_HEAD}{text}\", is the emotion {label} expressed in it?"),
        Track::B => format!(
            "{USER_HEAD}{text}\", what is the intensity of the emotion {label} expressed in it?"
        ),
    }
}

/// The sentence quoted inside a rendered user turn.
pub fn prompt_sentence(user: &str) -> Option<&str> {
    let rest = user.strip_prefix(USER_HEAD)?;
    let end = rest.rfind("\", ")?;
    Some(&rest[..end])
}

/// The label set spliced into a rendered system turn.
pub fn prompt_labels(system: &str) -> Vec<&str> {
    system
        .strip_prefix(SYSTEM_HEAD)
        .and_then(|rest| rest.split_once('}'))
        .map(|(inside, _)| inside.split(", ").filter(|l| !l.is_empty()).collect())
        .unwrap_or_default()
}

fn gold_of(s: &Sample, with_gold: bool) -> Result<Option<&LabelAssignment>, PromptError> {
    if s.text.is_empty() {
        return Err(PromptError::EmptyText(s.id.clone()));
    }
    if !with_gold {
        return Ok(None);
    }
    s.gold
        .as_ref()
        .map(Some)
        .ok_or_else(|| PromptError::MissingGold(s.id.clone()))
}

/// One prompt asking for every emotion of `s` at once.
pub fn render_base_prompt(
    schema: &LabelSchema,
    s: &Sample,
    track: Track,
    with_gold: bool,
) -> Result<PromptInstance, PromptError> {
    let assistant = gold_of(s, with_gold)?
        .map(|g| render_completion(g, track, Strategy::Base, None))
        .transpose()?;
    Ok(PromptInstance {
        sample_id: s.id.clone(),
        strategy: Strategy::Base,
        track,
        system: render_system(schema, track),
        user: user_base(&s.text, track),
        assistant,
        target_label: None,
    })
}

/// One prompt per schema label, in schema order.
pub fn render_pairwise_prompts(
    schema: &LabelSchema,
    s: &Sample,
    track: Track,
    with_gold: bool,
) -> Result<Vec<PromptInstance>, PromptError> {
    let gold = gold_of(s, with_gold)?;
    let system = render_system(schema, track);
    schema
        .labels()
        .iter()
        .map(|label| {
            let assistant = gold
                .map(|g| render_completion(g, track, Strategy::Pairwise, Some(label)))
                .transpose()?;
            Ok(PromptInstance {
                sample_id: s.id.clone(),
                strategy: Strategy::Pairwise,
                track,
                system: system.clone(),
                user: user_pairwise(&s.text, track, label),
                assistant,
                target_label: Some(label.clone()),
            })
        })
        .collect()
}

/// All prompts of one sample under `strategy`.
pub fn render_prompts(
    schema: &LabelSchema,
    s: &Sample,
    strategy: Strategy,
    track: Track,
    with_gold: bool,
) -> Result<Vec<PromptInstance>, PromptError> {
    match strategy {
        Strategy::Base => render_base_prompt(schema, s, track, with_gold).map(|p| vec![p]),
        Strategy::Pairwise => render_pairwise_prompts(schema, s, track, with_gold),
    }
}

fn level_name(v: u8) -> Result<&'static str, PromptError> {
    IntensityLevel::from_value(v)
        .map(IntensityLevel::name)
        .ok_or_else(|| PromptError::Assignment(format!("intensity {v} out of range")))
}

/// Canonical assistant text for an assignment.
pub fn render_completion(
    a: &LabelAssignment,
    track: Track,
    strategy: Strategy,
    target_label: Option<&str>,
) -> Result<String, PromptError> {
    if a.iter().any(|(_, v)| v > track.max_value()) {
        return Err(PromptError::Assignment(format!(
            "assignment values exceed track {track} range"
        )));
    }
    match strategy {
        Strategy::Base => {
            let parts: Vec<String> = match track {
                Track::A => a.active().map(str::to_string).collect(),
                Track::B => a
                    .iter()
                    .filter(|&(_, v)| v > 0)
                    .map(|(label, v)| Ok(format!("{} degree of {label}", level_name(v)?)))
                    .collect::<Result<_, PromptError>>()?,
            };
            Ok(if parts.is_empty() {
                NONE.to_string()
            } else {
                parts.join(", ")
            })
        }
        Strategy::Pairwise => {
            let target = target_label.ok_or(PromptError::MissingTarget)?;
            let v = a
                .get(target)
                .ok_or_else(|| PromptError::UnknownTarget(target.to_string()))?;
            Ok(match track {
                Track::A => if v > 0 { "yes" } else { "no" }.to_string(),
                Track::B => level_name(v)?.to_string(),
            })
        }
    }
}

fn normalize(token: &str) -> String {
    let trimmed = token
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '“' | '”'))
        .trim_end_matches(['.', '。', '!', '?'])
        .trim();
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn split_list(text: &str) -> Vec<String> {
    text.split([',', '，'])
        .map(normalize)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Inverse of [`render_completion`]: case-insensitive, whitespace tolerant,
/// splitting lists on ASCII and fullwidth commas.
pub fn parse_completion(
    sample_id: &str,
    text: &str,
    schema: &LabelSchema,
    track: Track,
    strategy: Strategy,
    target_label: Option<&str>,
) -> Result<CompletionFragment, ParseError> {
    let mut parsed = BTreeMap::new();
    match strategy {
        Strategy::Base => {
            for label in schema.labels() {
                parsed.insert(label.clone(), 0u8);
            }
            let tokens = split_list(text);
            let only_none = tokens.iter().all(|t| t == NONE);
            if !only_none {
                for token in tokens.iter().filter(|t| *t != NONE) {
                    let (label, value) = match track {
                        Track::A => (token.as_str(), 1),
                        Track::B => parse_degree_phrase(token)?,
                    };
                    match parsed.get_mut(label) {
                        Some(slot) => *slot = value,
                        None => return Err(ParseError::UnknownLabel(label.to_string())),
                    }
                }
            }
        }
        Strategy::Pairwise => {
            let target = target_label
                .filter(|t| schema.contains(t))
                .ok_or_else(|| ParseError::BadTarget(target_label.unwrap_or("").to_string()))?;
            let answer = normalize(text);
            let value = match track {
                Track::A => match answer.as_str() {
                    "yes" => 1,
                    "no" => 0,
                    _ => return Err(ParseError::UnrecognizedAnswer(text.to_string())),
                },
                Track::B => IntensityLevel::from_name(&answer)
                    .ok_or_else(|| ParseError::UnrecognizedAnswer(text.to_string()))?
                    .value(),
            };
            parsed.insert(target.to_string(), value);
        }
    }
    Ok(CompletionFragment {
        sample_id: sample_id.to_string(),
        target_label: target_label.map(str::to_string),
        parsed,
    })
}

/// `<level> degree of <emotion>` with an already normalized token.
fn parse_degree_phrase(token: &str) -> Result<(&str, u8), ParseError> {
    let malformed = || ParseError::MalformedDegreePhrase(token.to_string());
    let (level, rest) = token.split_once(' ').ok_or_else(malformed)?;
    let emotion = rest.strip_prefix("degree of ").ok_or_else(malformed)?;
    let level = IntensityLevel::from_name(level).ok_or_else(malformed)?;
    if emotion.is_empty() || emotion.contains(' ') {
        return Err(malformed());
    }
    Ok((emotion, level.value()))
}

/// Result of folding pairwise fragments into one assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregated {
    pub assignment: LabelAssignment,
    /// Schema labels without a fragment, defaulted to 0.
    pub dropped: usize,
}

/// Composes per-label pairwise decisions into the multi-label output.
pub fn aggregate_pairwise(
    fragments: &[CompletionFragment],
    schema: &LabelSchema,
) -> Result<Aggregated, PromptError> {
    let mut assignment = LabelAssignment::zeros(schema);
    let mut seen: Vec<&str> = Vec::with_capacity(fragments.len());
    for fragment in fragments {
        for (label, &value) in &fragment.parsed {
            if !schema.contains(label) {
                return Err(PromptError::UnknownTarget(label.clone()));
            }
            if seen.contains(&label.as_str()) {
                return Err(PromptError::DuplicateFragment(label.clone()));
            }
            seen.push(label);
            assignment
                .set(label, value)
                .map_err(|e| PromptError::Assignment(e.to_string()))?;
        }
    }
    Ok(Aggregated {
        assignment,
        dropped: schema.len() - seen.len(),
    })
}

#[derive(Serialize)]
struct InstructionRecord<'a> {
    messages: &'a [Message],
}

/// Writes one `{"messages":[...]}` line per gold prompt instance.
pub fn write_instruction_dataset<W: Write>(
    d: &Dataset,
    strategy: Strategy,
    track: Track,
    mut out: W,
) -> Result<usize, PromptError> {
    d.require_labeled()
        .map_err(|e| PromptError::MissingGold(e.to_string()))?;
    let mut count = 0;
    for s in d.samples() {
        for prompt in render_prompts(d.schema_for(s), s, strategy, track, true)? {
            let messages = prompt.messages();
            serde_json::to_writer(
                &mut out,
                &InstructionRecord {
                    messages: &messages,
                },
            )
            .map_err(|e| PromptError::Io(e.to_string()))?;
            out.write_all(b"\n")
                .map_err(|e| PromptError::Io(e.to_string()))?;
            count += 1;
        }
    }
    out.flush().map_err(|e| PromptError::Io(e.to_string()))?;
    Ok(count)
}

/// Exports the instruction-tuning corpus consumed by external trainers.
pub fn export_instruction_dataset(
    d: &Dataset,
    strategy: Strategy,
    track: Track,
    path: impl AsRef<Path>,
) -> Result<usize, PromptError> {
    let file = File::create(path.as_ref()).map_err(|e| PromptError::Io(e.to_string()))?;
    write_instruction_dataset(d, strategy, track, BufWriter::new(file))
}

/// SHA-256 over every template fragment, for run manifests.
pub fn template_hash() -> String {
    let mut h = Sha256::new();
    h.update(TEMPLATE_VERSION.to_le_bytes());
    for part in [
        SYSTEM_HEAD,
        SYSTEM_INTENSITY,
        SYSTEM_TAIL,
        USER_HEAD,
        BASE_A_QUESTION,
        BASE_B_QUESTION,
        &user_pairwise("{x}", Track::A, "{e}"),
        &user_pairwise("{x}", Track::B, "{e}"),
    ] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}
