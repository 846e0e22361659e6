//! Dataset ingestion, label schemas, deterministic dev splits and
//! multilingual mixing.
//!
//! A [`Dataset`] keeps one [`LabelSchema`] per language next to the union
//! schema. Samples of a mixed dataset only carry values for the labels of
//! their own language; every other label of the union is masked for them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("row {row}: {msg}")]
    BadCell { row: usize, msg: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("cannot mix datasets of different tracks")]
    MixedTracks,
    #[error("dataset contains unlabeled sample `{0}`")]
    Unlabeled(String),
    #[error("dev fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("dataset of {size} samples is too small for a {fraction} dev split")]
    TooSmall { size: usize, fraction: f64 },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Competition track: A is multi-label detection, B is intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    A,
    B,
}

impl Track {
    /// Largest admissible label value.
    pub fn max_value(self) -> u8 {
        match self {
            Track::A => 1,
            Track::B => 3,
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Track::A => f.write_str("a"),
            Track::B => f.write_str("b"),
        }
    }
}

impl FromStr for Track {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Track::A),
            "b" => Ok(Track::B),
            other => Err(format!("unknown track `{other}` (expected a or b)")),
        }
    }
}

/// Ordinal emotion intensity used by track B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IntensityLevel {
    None = 0,
    Low = 1,
    Moderate = 2,
    High = 3,
}

impl IntensityLevel {
    pub const ALL: [IntensityLevel; 4] = [
        IntensityLevel::None,
        IntensityLevel::Low,
        IntensityLevel::Moderate,
        IntensityLevel::High,
    ];

    pub fn from_value(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            IntensityLevel::None => "none",
            IntensityLevel::Low => "low",
            IntensityLevel::Moderate => "moderate",
            IntensityLevel::High => "high",
        }
    }

    /// Case-insensitive lookup by name.
    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim().to_lowercase();
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

impl fmt::Display for IntensityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered emotion label set of a dataset or language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    labels: Vec<String>,
    track: Track,
}

impl LabelSchema {
    pub fn new<I, S>(labels: I, track: Track) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(CorpusError::InvalidSchema("no labels".into()));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidSchema(format!(
                    "label `{label}` is empty or contains whitespace"
                )));
            }
            if label.to_lowercase() != *label {
                return Err(CorpusError::InvalidSchema(format!(
                    "label `{label}` is not lowercase"
                )));
            }
            if !seen.insert(label.as_str()) {
                return Err(CorpusError::InvalidSchema(format!(
                    "duplicate label `{label}`"
                )));
            }
        }
        Ok(Self { labels, track })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn track(&self) -> Track {
        self.track
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Ordered union, labels kept in order of first appearance.
    pub fn union<'a, I>(schemas: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabelSchema>,
    {
        let mut labels: Vec<String> = Vec::new();
        let mut track = None;
        for schema in schemas {
            match track {
                None => track = Some(schema.track),
                Some(t) if t != schema.track => return Err(CorpusError::MixedTracks),
                _ => {}
            }
            for label in &schema.labels {
                if !labels.contains(label) {
                    labels.push(label.clone());
                }
            }
        }
        let track = track.ok_or_else(|| CorpusError::InvalidSchema("no schemas".into()))?;
        Self::new(labels, track)
    }
}

/// Per-emotion gold or predicted values, kept in schema order.
///
/// Labels that are not keys of the assignment are absent-by-schema (masked).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    track: Track,
    values: IndexMap<String, u8>,
}

impl LabelAssignment {
    /// Builds an assignment over exactly the labels of `schema`, ordering the
    /// given pairs by the schema regardless of their input order.
    pub fn from_pairs<I, S>(schema: &LabelSchema, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u8)>,
        S: AsRef<str>,
    {
        let mut given: BTreeMap<String, u8> = BTreeMap::new();
        for (label, value) in pairs {
            let label = label.as_ref();
            if !schema.contains(label) {
                return Err(CorpusError::InvalidAssignment(format!(
                    "label `{label}` is not in the schema"
                )));
            }
            if given.insert(label.to_string(), value).is_some() {
                return Err(CorpusError::InvalidAssignment(format!(
                    "duplicate label `{label}`"
                )));
            }
        }
        if given.len() != schema.len() {
            return Err(CorpusError::InvalidAssignment(format!(
                "expected {} labels, got {}",
                schema.len(),
                given.len()
            )));
        }
        let values = schema
            .labels()
            .iter()
            .map(|l| (l.clone(), given[l]))
            .collect();
        let assignment = Self {
            track: schema.track(),
            values,
        };
        assignment.check_range()?;
        Ok(assignment)
    }

    /// All-zero assignment over `schema`.
    pub fn zeros(schema: &LabelSchema) -> Self {
        Self {
            track: schema.track(),
            values: schema.labels().iter().map(|l| (l.clone(), 0)).collect(),
        }
    }

    /// Assignment in which exactly the `active` labels carry `value`.
    pub fn with_active<'a, I>(schema: &LabelSchema, active: I, value: u8) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut a = Self::zeros(schema);
        for label in active {
            a.set(label, value)?;
        }
        Ok(a)
    }

    fn check_range(&self) -> Result<()> {
        let max = self.track.max_value();
        for (label, &v) in &self.values {
            if v > max {
                return Err(CorpusError::InvalidAssignment(format!(
                    "value {v} for `{label}` exceeds track {} maximum {max}",
                    self.track
                )));
            }
        }
        Ok(())
    }

    pub fn track(&self) -> Track {
        self.track
    }

    pub fn get(&self, label: &str) -> Option<u8> {
        self.values.get(label).copied()
    }

    /// Overwrites an existing label's value.
    pub fn set(&mut self, label: &str, value: u8) -> Result<()> {
        if value > self.track.max_value() {
            return Err(CorpusError::InvalidAssignment(format!(
                "value {value} for `{label}` out of range"
            )));
        }
        match self.values.get_mut(label) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(CorpusError::InvalidAssignment(format!(
                "label `{label}` is not part of this assignment"
            ))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u8)> {
        self.values.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Labels with a non-zero value, in assignment order.
    pub fn active(&self) -> impl Iterator<Item = &str> {
        self.iter().filter(|&(_, v)| v > 0).map(|(k, _)| k)
    }

    /// Whether the keys are exactly the labels of `schema`, in order.
    pub fn matches_schema(&self, schema: &LabelSchema) -> bool {
        self.track == schema.track()
            && self.values.len() == schema.len()
            && self.values.keys().zip(schema.labels()).all(|(a, b)| a == b)
    }
}

/// One text instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub lang: String,
    pub text: String,
    pub gold: Option<LabelAssignment>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        lang: impl Into<String>,
        text: impl Into<String>,
        gold: Option<LabelAssignment>,
    ) -> Result<Self> {
        let sample = Self {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
            gold,
        };
        if sample.text.is_empty() {
            return Err(CorpusError::InvalidSample(format!(
                "sample `{}` has empty text",
                sample.id
            )));
        }
        if sample.lang.is_empty() {
            return Err(CorpusError::InvalidSample(format!(
                "sample `{}` has no language",
                sample.id
            )));
        }
        Ok(sample)
    }
}

/// An ordered, immutable collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    schema: LabelSchema,
    lang_schemas: BTreeMap<String, LabelSchema>,
}

impl Dataset {
    /// Single-schema dataset: every language uses `schema`.
    pub fn new(samples: Vec<Sample>, schema: LabelSchema) -> Result<Self> {
        let lang_schemas = samples
            .iter()
            .map(|s| (s.lang.clone(), schema.clone()))
            .collect();
        Self::with_lang_schemas(samples, schema, lang_schemas)
    }

    /// Dataset whose languages may use subsets of the union `schema`.
    pub fn with_lang_schemas(
        samples: Vec<Sample>,
        schema: LabelSchema,
        lang_schemas: BTreeMap<String, LabelSchema>,
    ) -> Result<Self> {
        let mut ids = HashSet::new();
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            let native = lang_schemas.get(&s.lang).ok_or_else(|| {
                CorpusError::InvalidSchema(format!("no schema for language `{}`", s.lang))
            })?;
            if let Some(gold) = &s.gold {
                if !gold.matches_schema(native) {
                    return Err(CorpusError::InvalidAssignment(format!(
                        "sample `{}` does not match the `{}` schema",
                        s.id, s.lang
                    )));
                }
            }
        }
        for native in lang_schemas.values() {
            if native.track() != schema.track() {
                return Err(CorpusError::MixedTracks);
            }
            if let Some(l) = native.labels().iter().find(|l| !schema.contains(l)) {
                return Err(CorpusError::InvalidSchema(format!(
                    "language label `{l}` missing from the union schema"
                )));
            }
        }
        let present: BTreeSet<&String> = samples.iter().map(|s| &s.lang).collect();
        let lang_schemas = lang_schemas
            .into_iter()
            .filter(|(lang, _)| present.contains(lang))
            .collect();
        Ok(Self {
            samples,
            schema,
            lang_schemas,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn track(&self) -> Track {
        self.schema.track()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Language codes present in the dataset.
    pub fn langs(&self) -> BTreeSet<&str> {
        self.lang_schemas.keys().map(String::as_str).collect()
    }

    pub fn lang_schemas(&self) -> &BTreeMap<String, LabelSchema> {
        &self.lang_schemas
    }

    /// The native label set of a sample's language.
    pub fn schema_for(&self, sample: &Sample) -> &LabelSchema {
        self.lang_schemas.get(&sample.lang).unwrap_or(&self.schema)
    }

    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.gold.is_some())
    }

    pub fn require_labeled(&self) -> Result<()> {
        match self.samples.iter().find(|s| s.gold.is_none()) {
            Some(s) => Err(CorpusError::Unlabeled(s.id.clone())),
            None => Ok(()),
        }
    }

    /// Gold assignments keyed by sample id, in dataset order.
    pub fn golds(&self) -> Vec<(String, LabelAssignment)> {
        self.samples
            .iter()
            .filter_map(|s| s.gold.clone().map(|g| (s.id.clone(), g)))
            .collect()
    }

    /// Subset of samples (keeping order) restricted to one language.
    pub fn language(&self, lang: &str) -> Result<Dataset> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.lang == lang)
            .cloned()
            .collect();
        let schema = self
            .lang_schemas
            .get(lang)
            .cloned()
            .unwrap_or_else(|| self.schema.clone());
        Dataset::new(samples, schema)
    }

    fn subset(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        let samples: Vec<Sample> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        let present: BTreeSet<&str> = samples.iter().map(|s| s.lang.as_str()).collect();
        let lang_schemas = self
            .lang_schemas
            .iter()
            .filter(|(l, _)| present.contains(l.as_str()))
            .map(|(l, s)| (l.clone(), s.clone()))
            .collect();
        Dataset {
            samples,
            schema: self.schema.clone(),
            lang_schemas,
        }
    }

    /// Writes one JSON object per sample:
    /// `{"id":..,"lang":..,"text":..,"labels":{..}}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.samples {
            let record = JsonlRecord {
                id: s.id.clone(),
                lang: s.lang.clone(),
                text: s.text.clone(),
                labels: s.gold.as_ref().map(|g| g.values.clone()),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write_jsonl(BufWriter::new(file))
            .map_err(|e| io_err(path, e))
    }

    /// Reads the JSON Lines serialization back. The union schema and the
    /// per-language schemas are recovered from label keys in order of
    /// first appearance.
    pub fn read_jsonl<R: Read>(input: R, track: Track) -> Result<Dataset> {
        let mut samples = Vec::new();
        let mut union: Vec<String> = Vec::new();
        let mut per_lang: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| io_err(Path::new("<jsonl>"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonlRecord =
                serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                    line: i + 1,
                    source,
                })?;
            let lang_labels = per_lang.entry(rec.lang.clone()).or_default();
            if let Some(labels) = &rec.labels {
                for key in labels.keys() {
                    if !union.contains(key) {
                        union.push(key.clone());
                    }
                    if !lang_labels.contains(key) {
                        lang_labels.push(key.clone());
                    }
                }
            }
            samples.push((rec, i + 1));
        }
        if samples.is_empty() {
            return Err(CorpusError::EmptyFile("<jsonl>".into()));
        }
        let schema = LabelSchema::new(union, track)?;
        let mut lang_schemas = BTreeMap::new();
        for (lang, labels) in per_lang {
            let native = if labels.is_empty() {
                schema.clone()
            } else {
                LabelSchema::new(labels, track)?
            };
            lang_schemas.insert(lang, native);
        }
        let samples = samples
            .into_iter()
            .map(|(rec, row)| {
                let gold = match rec.labels {
                    Some(labels) => {
                        let native = &lang_schemas[&rec.lang];
                        Some(LabelAssignment::from_pairs(native, labels).map_err(|e| {
                            CorpusError::BadCell {
                                row,
                                msg: e.to_string(),
                            }
                        })?)
                    }
                    None => None,
                };
                Sample::new(rec.id, rec.lang, rec.text, gold)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::with_lang_schemas(samples, schema, lang_schemas)
    }

    pub fn load_jsonl(path: impl AsRef<Path>, track: Track) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        Self::read_jsonl(file, track).map_err(|e| match e {
            CorpusError::EmptyFile(_) => CorpusError::EmptyFile(path.display().to_string()),
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    id: String,
    lang: String,
    text: String,
    labels: Option<IndexMap<String, u8>>,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads a per-language CSV file with header `id,text,<label1>,...`.
///
/// Rows whose label cells are all empty are read as unlabeled samples.
pub fn load_dataset(path: impl AsRef<Path>, track: Track, lang: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(file, track, lang).map_err(|e| match e {
        CorpusError::EmptyFile(_) => CorpusError::EmptyFile(path.display().to_string()),
        other => other,
    })
}

/// [`load_dataset`] over any reader.
pub fn read_csv<R: Read>(input: R, track: Track, lang: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(CorpusError::EmptyFile("<csv>".into())),
    };
    let header: Vec<String> = header
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_string())
        .collect();
    if header.len() < 3 || header[0] != "id" || header[1] != "text" {
        return Err(CorpusError::BadHeader(format!(
            "expected `id,text,<labels...>`, got `{}`",
            header.join(",")
        )));
    }
    let labels: Vec<String> = header[2..].iter().map(|h| h.to_lowercase()).collect();
    let schema =
        LabelSchema::new(labels, track).map_err(|e| CorpusError::BadHeader(e.to_string()))?;

    let mut samples = Vec::new();
    for (i, record) in records.enumerate() {
        let row = i + 2;
        let record = record?;
        let cells: Vec<&str> = record.iter().map(str::trim).collect();
        let id = cells[0].to_string();
        let text = record.get(1).unwrap_or_default().to_string();
        let label_cells = &cells[2..];
        let gold = if label_cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            let mut pairs = Vec::with_capacity(label_cells.len());
            for (label, cell) in schema.labels().iter().zip(label_cells) {
                let value: u8 = cell.parse().map_err(|_| CorpusError::BadCell {
                    row,
                    msg: format!("non-integer value `{cell}` for `{label}`"),
                })?;
                if value > track.max_value() {
                    return Err(CorpusError::BadCell {
                        row,
                        msg: format!("value {value} for `{label}` out of range for track {track}"),
                    });
                }
                pairs.push((label.as_str(), value));
            }
            Some(LabelAssignment::from_pairs(&schema, pairs)?)
        };
        let sample = Sample::new(id, lang, text, gold).map_err(|e| CorpusError::BadCell {
            row,
            msg: e.to_string(),
        })?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(CorpusError::EmptyFile("<csv>".into()));
    }
    Dataset::new(samples, schema)
}

/// Position of a sample id in the seeded split order.
pub fn split_key(id: &str, seed: u64) -> u64 {
    XxHash64::oneshot(seed, id.as_bytes())
}

/// Per-language stratified dev split.
///
/// The dev set holds `round(dev_fraction * |d|)` samples. Quotas are
/// apportioned to languages by largest remainder, so each language
/// contributes within one sample of `dev_fraction` of its size. Inside a
/// language, samples with the smallest seeded id hash go to dev. Both
/// halves keep the input order.
pub fn internal_split(d: &Dataset, dev_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(CorpusError::BadFraction(dev_fraction));
    }
    d.require_labeled()?;
    let n = d.len();
    let total = (dev_fraction * n as f64).round() as usize;
    if total == 0 || total >= n {
        return Err(CorpusError::TooSmall {
            size: n,
            fraction: dev_fraction,
        });
    }

    let mut by_lang: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in d.samples() {
        by_lang.entry(s.lang.as_str()).or_default().push(s);
    }
    let quotas = apportion(
        &by_lang
            .iter()
            .map(|(l, v)| (*l, v.len()))
            .collect::<Vec<_>>(),
        dev_fraction,
        total,
    );

    let mut dev_ids: HashSet<&str> = HashSet::new();
    for (lang, members) in &by_lang {
        let mut ranked: Vec<(u64, &str)> = members
            .iter()
            .map(|s| (split_key(&s.id, seed), s.id.as_str()))
            .collect();
        ranked.sort_unstable();
        dev_ids.extend(ranked.iter().take(quotas[lang]).map(|&(_, id)| id));
    }
    let train = d.subset(|s| !dev_ids.contains(s.id.as_str()));
    let dev = d.subset(|s| dev_ids.contains(s.id.as_str()));
    Ok((train, dev))
}

/// Largest-remainder apportionment of `total` across groups proportional to
/// `fraction * size`; ties broken by group key.
fn apportion<'a>(
    groups: &[(&'a str, usize)],
    fraction: f64,
    total: usize,
) -> BTreeMap<&'a str, usize> {
    let mut quotas: BTreeMap<&str, usize> = BTreeMap::new();
    let mut remainders = Vec::with_capacity(groups.len());
    let mut assigned = 0usize;
    for &(key, size) in groups {
        let exact = fraction * size as f64;
        let base = (exact.floor() as usize).min(size);
        quotas.insert(key, base);
        assigned += base;
        remainders.push((exact - base as f64, key, size));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut i = 0;
    while assigned < total && !remainders.is_empty() {
        let (_, key, size) = remainders[i % remainders.len()];
        let q = quotas.get_mut(key).expect("known group");
        if *q < size {
            *q += 1;
            assigned += 1;
        }
        i += 1;
    }
    quotas
}

/// Pools datasets of one track into a single dataset over the union schema.
pub fn mix_languages(datasets: &[Dataset]) -> Result<Dataset> {
    let first = datasets
        .first()
        .ok_or_else(|| CorpusError::InvalidSchema("nothing to mix".into()))?;
    if datasets.iter().any(|d| d.track() != first.track()) {
        return Err(CorpusError::MixedTracks);
    }
    // empty parts contribute no samples, so none of their labels either
    if datasets.iter().all(Dataset::is_empty) {
        return Err(CorpusError::InvalidSchema("nothing to mix".into()));
    }
    let union = LabelSchema::union(
        datasets
            .iter()
            .filter(|d| !d.is_empty())
            .map(Dataset::schema),
    )?;
    let mut lang_schemas: BTreeMap<String, LabelSchema> = BTreeMap::new();
    let mut samples = Vec::new();
    for d in datasets {
        for (lang, native) in &d.lang_schemas {
            match lang_schemas.get(lang) {
                Some(existing) if existing != native => {
                    return Err(CorpusError::InvalidSchema(format!(
                        "language `{lang}` appears with two different schemas"
                    )))
                }
                Some(_) => {}
                None => {
                    lang_schemas.insert(lang.clone(), native.clone());
                }
            }
        }
        samples.extend(d.samples.iter().cloned());
    }
    Dataset::with_lang_schemas(samples, union, lang_schemas)
}
