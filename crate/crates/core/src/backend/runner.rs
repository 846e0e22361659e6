use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    pairwise_yes_probability, Backend, BackendError, Completion, GenerationConfig, YES_THRESHOLD,
};
use crate::corpus::{Dataset, LabelAssignment, Track};
use crate::prompting::{
    aggregate_pairwise, parse_completion, render_prompts, PromptInstance, Strategy,
};

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub strategy: Strategy,
    pub track: Track,
    /// Upper bound on in-flight requests.
    pub concurrency: usize,
    /// Decide pairwise track A answers from first-token yes/no mass.
    pub use_logit_probs: bool,
    /// Append-only log of completed requests; existing entries are reused.
    pub journal: Option<PathBuf>,
}

impl InferenceOptions {
    pub fn new(strategy: Strategy, track: Track) -> Self {
        Self {
            strategy,
            track,
            concurrency: 1,
            use_logit_probs: false,
            journal: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    fn from_millis(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        ms.sort_by(f64::total_cmp);
        let pick = |q: f64| ms[((ms.len() - 1) as f64 * q).round() as usize];
        Self {
            count: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: ms[ms.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Requests the run needed in total.
    pub requests: usize,
    /// Of those, answered from the journal instead of the backend.
    pub resumed: usize,
    pub parse_errors: usize,
    /// `parse_errors / requests`.
    pub drop_rate: f64,
    pub retries: u64,
    /// Pairwise answers that fell back to text parsing under the logit path.
    pub logit_fallbacks: usize,
    pub latency: LatencySummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub predictions: Vec<(String, LabelAssignment)>,
    pub stats: RunStats,
}

#[derive(Serialize, Deserialize)]
struct JournalEntry {
    key: String,
    completion: Completion,
}

fn load_journal(path: &PathBuf) -> Result<HashMap<String, Completion>, BackendError> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let file = File::open(path).map_err(|e| BackendError::Journal(e.to_string()))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| BackendError::Journal(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from an interrupted run is skipped
        if let Ok(entry) = serde_json::from_str::<JournalEntry>(&line) {
            done.insert(entry.key, entry.completion);
        }
    }
    Ok(done)
}

fn marker_path(journal: &Path) -> PathBuf {
    let mut name = journal.as_os_str().to_owned();
    name.push(".incomplete");
    PathBuf::from(name)
}

/// Runs every prompt of `d` through `backend` and folds the answers back
/// into one assignment per sample, in dataset order.
///
/// Predictions do not depend on `concurrency` or on arrival order. On an
/// unrecoverable backend error the journal keeps every completed request
/// and a `<journal>.incomplete` marker is written so a rerun can resume.
pub fn run_inference<B: Backend + ?Sized>(
    d: &Dataset,
    backend: &B,
    cfg: &GenerationConfig,
    opts: &InferenceOptions,
) -> Result<InferenceOutput, BackendError> {
    let mut prompts: Vec<PromptInstance> = Vec::new();
    let mut spans = Vec::with_capacity(d.len());
    for s in d.samples() {
        let start = prompts.len();
        prompts.extend(render_prompts(
            d.schema_for(s),
            s,
            opts.strategy,
            opts.track,
            false,
        )?);
        spans.push(start..prompts.len());
    }

    let mut cached = match &opts.journal {
        Some(path) => load_journal(path)?,
        None => HashMap::new(),
    };
    let mut results: Vec<Option<Completion>> = prompts
        .iter()
        .map(|p| cached.remove(&p.request_key()))
        .collect();
    let resumed = results.iter().filter(|r| r.is_some()).count();
    let pending: Vec<usize> = (0..prompts.len())
        .filter(|&i| results[i].is_none())
        .collect();

    let journal = match &opts.journal {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| BackendError::Journal(e.to_string()))?,
        )),
        None => None,
    };

    let retries_before = backend.retries();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<BackendError>> = Mutex::new(None);
    let fresh: Mutex<Vec<(usize, Completion)>> = Mutex::new(Vec::with_capacity(pending.len()));
    let latencies: Mutex<Vec<f64>> = Mutex::new(Vec::with_capacity(pending.len()));
    let workers = opts.concurrency.max(1).min(pending.len().max(1));

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&idx) = pending.get(slot) else { break };
                let prompt = &prompts[idx];
                let started = Instant::now();
                match backend.complete(prompt, cfg) {
                    Ok(c) => {
                        latencies
                            .lock()
                            .expect("latency lock")
                            .push(started.elapsed().as_secs_f64() * 1e3);
                        if let Some(j) = &journal {
                            let entry = JournalEntry {
                                key: prompt.request_key(),
                                completion: c.clone(),
                            };
                            let mut file = j.lock().expect("journal lock");
                            let written = serde_json::to_string(&entry)
                                .map_err(|e| e.to_string())
                                .and_then(|line| {
                                    writeln!(file, "{line}").map_err(|e| e.to_string())
                                });
                            if let Err(e) = written {
                                abort.store(true, Ordering::SeqCst);
                                failure
                                    .lock()
                                    .expect("failure lock")
                                    .get_or_insert(BackendError::Journal(e));
                                break;
                            }
                        }
                        fresh.lock().expect("result lock").push((idx, c));
                    }
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        failure.lock().expect("failure lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(j) = &journal {
        j.lock().expect("journal lock").flush().ok();
    }
    if let Some(err) = failure.into_inner().expect("failure lock") {
        if let Some(path) = &opts.journal {
            let marker = format!(
                "{{\"error\":{}}}\n",
                serde_json::Value::String(err.to_string())
            );
            if let Err(e) = fs::write(marker_path(path), marker) {
                log::warn!("could not write resume marker: {e}");
            }
        }
        return Err(err);
    }
    if let Some(path) = &opts.journal {
        let marker = marker_path(path);
        if marker.exists() {
            fs::remove_file(marker).ok();
        }
    }
    for (idx, c) in fresh.into_inner().expect("result lock") {
        results[idx] = Some(c);
    }

    let mut stats = RunStats {
        requests: prompts.len(),
        resumed,
        retries: backend.retries().saturating_sub(retries_before),
        latency: LatencySummary::from_millis(latencies.into_inner().expect("latency lock")),
        ..Default::default()
    };

    let mut predictions = Vec::with_capacity(d.len());
    for (s, span) in d.samples().iter().zip(spans) {
        let schema = d.schema_for(s);
        let assignment = match opts.strategy {
            Strategy::Base => {
                let c = results[span.start]
                    .as_ref()
                    .expect("every request answered");
                match parse_completion(&s.id, &c.text, schema, opts.track, Strategy::Base, None) {
                    Ok(f) => LabelAssignment::from_pairs(schema, f.parsed)
                        .expect("base fragments cover the schema"),
                    Err(e) => {
                        log::warn!("sample {}: dropping completion: {e}", s.id);
                        stats.parse_errors += 1;
                        LabelAssignment::zeros(schema)
                    }
                }
            }
            Strategy::Pairwise => {
                let mut fragments = Vec::with_capacity(span.len());
                for idx in span {
                    let prompt = &prompts[idx];
                    let c = results[idx].as_ref().expect("every request answered");
                    let target = prompt.target_label.as_deref();
                    if opts.use_logit_probs && opts.track == Track::A {
                        match pairwise_yes_probability(c) {
                            Ok(p) => {
                                let label = target.expect("pairwise target").to_string();
                                fragments.push(crate::prompting::CompletionFragment {
                                    sample_id: s.id.clone(),
                                    target_label: Some(label.clone()),
                                    parsed: [(label, u8::from(p >= YES_THRESHOLD))].into(),
                                });
                                continue;
                            }
                            Err(e) => {
                                log::warn!(
                                    "{}: no usable yes/no logprobs ({e}), parsing text instead",
                                    prompt.request_key()
                                );
                                stats.logit_fallbacks += 1;
                            }
                        }
                    }
                    match parse_completion(
                        &s.id,
                        &c.text,
                        schema,
                        opts.track,
                        Strategy::Pairwise,
                        target,
                    ) {
                        Ok(f) => fragments.push(f),
                        Err(e) => {
                            log::warn!("{}: dropping completion: {e}", prompt.request_key());
                            stats.parse_errors += 1;
                        }
                    }
                }
                aggregate_pairwise(&fragments, schema)?.assignment
            }
        };
        predictions.push((s.id.clone(), assignment));
    }
    stats.drop_rate = if stats.requests == 0 {
        0.0
    } else {
        stats.parse_errors as f64 / stats.requests as f64
    };
    Ok(InferenceOutput { predictions, stats })
}
