//! Corpus ingestion, validation and deterministic train/valid/test splits.
//!
//! On-disk layout under a corpus root:
//!
//! ```text
//! index.tsv            id<TAB>annotated_text<TAB>pinyin (space separated)
//! intervals/<id>.tsv   char<TAB>start_sec<TAB>end_sec<TAB>pinyin
//! pitch/<id>.tsv       time_sec<TAB>f_hz   (0 = unvoiced)
//! ```
//!
//! Interval and pitch files are optional per sample.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_feature_sequence, read_intervals, CharSpan, FeatureSequence, PitchTrack, ReferenceF0};
use crate::markup::{parse_annotated_report, AnnotatedSentence, ParsePolicy};
use crate::rng::SplitMix64;

pub const INDEX_FILE: &str = "index.tsv";
pub const INTERVAL_DIR: &str = "intervals";
pub const PITCH_DIR: &str = "pitch";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no {INDEX_FILE} under {0}")]
    MissingIndex(PathBuf),
    #[error("corpus contains no samples")]
    NoSamples,
    #[error("split needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("unknown sample id {0:?}")]
    UnknownId(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed split manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSample {
    pub id: String,
    pub annotated: AnnotatedSentence,
    pub pinyin: Vec<String>,
    pub spans: Option<Vec<CharSpan>>,
    pub pitch: Option<PitchTrack>,
    /// Preceding dialogue turn generated for this sentence.
    pub context_utterance: Option<String>,
    pub response_features: Option<FeatureSequence>,
    /// False when characters, pinyin and spans disagree in count.
    pub usable_for_features: bool,
}

impl CorpusSample {
    /// Sample with only text and pinyin.
    pub fn from_text(id: impl Into<String>, annotated: AnnotatedSentence, pinyin: Vec<String>) -> Self {
        let usable = pinyin.len() == annotated.len();
        Self {
            id: id.into(),
            annotated,
            pinyin,
            spans: None,
            pitch: None,
            context_utterance: None,
            response_features: None,
            usable_for_features: usable,
        }
    }

    pub fn plain_text(&self) -> String {
        self.annotated.text()
    }

    pub fn markup(&self) -> String {
        self.annotated.to_string()
    }

    fn check_consistency(&mut self) -> bool {
        let n = self.annotated.len();
        let spans_ok = self.spans.as_ref().is_none_or(|s| {
            s.len() == n && s.iter().zip(self.annotated.chars()).all(|(span, &c)| span.ch == c)
        });
        self.usable_for_features = self.pinyin.len() == n && spans_ok;
        self.usable_for_features
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Corpus {
    pub samples: Vec<CorpusSample>,
}

impl Corpus {
    pub fn new(samples: Vec<CorpusSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Speaker-level reference: geometric mean of all voiced frames.
    pub fn reference_f0(&self) -> Result<ReferenceF0, crate::features::FeatureError> {
        ReferenceF0::geometric_mean(self.samples.iter().filter_map(|s| s.pitch.as_ref()))
    }

    /// Fills `response_features` for every sample that supports extraction.
    pub fn compute_features(&mut self, reference: ReferenceF0) -> usize {
        let mut filled = 0;
        for sample in &mut self.samples {
            if !sample.usable_for_features {
                continue;
            }
            if let Ok(features) = build_feature_sequence(sample, reference) {
                sample.response_features = Some(features);
                filled += 1;
            }
        }
        filled
    }

    /// Looks up a list of ids, keeping their order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&CorpusSample>, CorpusError> {
        let by_id: BTreeMap<&str, &CorpusSample> = self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| CorpusError::UnknownId(id.clone())))
            .collect()
    }
}

/// Counts gathered while loading a corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub sentence_end_discards: usize,
    pub markup_warnings: usize,
    /// 1-based index lines that could not be read as a sample.
    pub malformed_lines: Vec<usize>,
    pub duplicate_ids: Vec<String>,
    pub length_mismatches: Vec<String>,
    pub missing_intervals: Vec<String>,
    pub missing_pitch: Vec<String>,
    pub invalid_files: Vec<String>,
}

impl ValidationReport {
    /// Problems that make a sample unusable or unreadable. Missing optional
    /// files are not counted.
    pub fn error_count(&self) -> usize {
        self.malformed_lines.len() + self.duplicate_ids.len() + self.length_mismatches.len() + self.invalid_files.len()
    }
}

/// One line of the index file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub id: String,
    pub annotated: String,
    pub pinyin: Vec<String>,
}

impl IndexEntry {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.id, self.annotated, self.pinyin.join(" "))
    }
}

pub fn parse_index_line(line: &str) -> Option<IndexEntry> {
    let mut cols = line.split('\t');
    let id = cols.next()?.trim();
    let annotated = cols.next()?.trim();
    let pinyin = cols.next().unwrap_or("");
    if cols.next().is_some() || id.is_empty() {
        return None;
    }
    Some(IndexEntry {
        id: id.to_string(),
        annotated: annotated.to_string(),
        pinyin: pinyin.split_whitespace().map(str::to_string).collect(),
    })
}

pub fn load_corpus(root: &Path) -> Result<(Corpus, ValidationReport), CorpusError> {
    let index_path = root.join(INDEX_FILE);
    if !index_path.is_file() {
        return Err(CorpusError::MissingIndex(root.to_path_buf()));
    }
    let index = std::fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();
    let mut samples = Vec::new();

    for (i, line) in index.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some(entry) = parse_index_line(line) else {
            report.malformed_lines.push(i + 1);
            continue;
        };
        let Ok(parsed) = parse_annotated_report(&entry.annotated, ParsePolicy::Lenient) else {
            report.malformed_lines.push(i + 1);
            continue;
        };
        if !seen.insert(entry.id.clone()) {
            report.duplicate_ids.push(entry.id);
            continue;
        }
        report.sentence_end_discards += parsed.sentence_end_discards;
        report.markup_warnings += parsed.warnings.len();

        let mut sample = CorpusSample::from_text(entry.id.clone(), parsed.sentence, entry.pinyin);
        let interval_path = root.join(INTERVAL_DIR).join(format!("{}.tsv", entry.id));
        if interval_path.is_file() {
            match read_intervals(&interval_path) {
                Ok(spans) => sample.spans = Some(spans),
                Err(e) => {
                    log::warn!("{}: {e}", interval_path.display());
                    report.invalid_files.push(interval_path.display().to_string());
                }
            }
        } else {
            report.missing_intervals.push(entry.id.clone());
        }
        let pitch_path = root.join(PITCH_DIR).join(format!("{}.tsv", entry.id));
        if pitch_path.is_file() {
            match PitchTrack::read(&pitch_path) {
                Ok(track) => sample.pitch = Some(track),
                Err(e) => {
                    log::warn!("{}: {e}", pitch_path.display());
                    report.invalid_files.push(pitch_path.display().to_string());
                }
            }
        } else {
            report.missing_pitch.push(entry.id.clone());
        }
        if !sample.check_consistency() {
            report.length_mismatches.push(entry.id);
        }
        samples.push(sample);
    }

    if samples.is_empty() {
        return Err(CorpusError::NoSamples);
    }
    report.samples = samples.len();
    Ok((Corpus::new(samples), report))
}

/// Train/valid/test proportions and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self, CorpusError> {
        if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(CorpusError::InvalidRatios(format!("{ratios:?}: every ratio must be positive")));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(format!("{ratios:?} sums to {sum}, not 1")));
        }
        Ok(Self { ratios, seed })
    }

    /// Parses `"8:1:1"` (or `"0.8:0.1:0.1"`) and normalizes to sum 1.
    pub fn parse_ratios(text: &str, seed: u64) -> Result<Self, CorpusError> {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CorpusError::InvalidRatios(format!("{text:?}: {e}")))?;
        let [a, b, c] = parts.as_slice() else {
            return Err(CorpusError::InvalidRatios(format!("{text:?}: expected three parts")));
        };
        let sum = a + b + c;
        Self::new([a / sum, b / sum, c / sum], seed)
    }

    /// Sizes `⌊n·r⌋` for valid and test; the remainder goes to train.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let valid = floor(self.ratios[1]);
        let test = floor(self.ratios[2]);
        [n - valid - test, valid, test]
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [0.8, 0.1, 0.1], seed: 0 }
    }
}

/// Split membership, serialized as `{seed, ratios, train, valid, test}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(text).map_err(|e| CorpusError::Manifest(e.to_string()))
    }

    pub fn part(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }
}

/// Sorts ids, shuffles them with SplitMix64 Fisher–Yates and cuts the result
/// into contiguous train, valid and test blocks.
pub fn split_ids(ids: &[String], spec: &SplitSpec) -> Result<SplitManifest, CorpusError> {
    if ids.len() < 3 {
        return Err(CorpusError::TooFewSamples(ids.len()));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    SplitMix64::new(spec.seed).shuffle(&mut order);
    let [train, valid, _] = spec.sizes(order.len());
    let test = order.split_off(train + valid);
    let valid = order.split_off(train);
    Ok(SplitManifest {
        seed: spec.seed,
        ratios: spec.ratios,
        train: order,
        valid,
        test,
    })
}

pub struct CorpusSplit<'a> {
    pub train: Vec<&'a CorpusSample>,
    pub valid: Vec<&'a CorpusSample>,
    pub test: Vec<&'a CorpusSample>,
}

impl<'a> CorpusSplit<'a> {
    pub fn part(&self, name: SplitName) -> &[&'a CorpusSample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }
}

pub fn split_corpus<'a>(corpus: &'a Corpus, spec: &SplitSpec) -> Result<(CorpusSplit<'a>, SplitManifest), CorpusError> {
    let manifest = split_ids(&corpus.ids(), spec)?;
    let split = apply_manifest(corpus, &manifest)?;
    Ok((split, manifest))
}

pub fn apply_manifest<'a>(corpus: &'a Corpus, manifest: &SplitManifest) -> Result<CorpusSplit<'a>, CorpusError> {
    Ok(CorpusSplit {
        train: corpus.select(&manifest.train)?,
        valid: corpus.select(&manifest.valid)?,
        test: corpus.select(&manifest.test)?,
    })
}

/// Sets `context_utterance` for the given ids. Nothing changes if any id is unknown.
pub fn attach_contexts(corpus: &mut Corpus, contexts: &BTreeMap<String, String>) -> Result<(), CorpusError> {
    let known: BTreeSet<&str> = corpus.samples.iter().map(|s| s.id.as_str()).collect();
    if let Some(id) = contexts.keys().find(|id| !known.contains(id.as_str())) {
        return Err(CorpusError::UnknownId(id.clone()));
    }
    for sample in &mut corpus.samples {
        if let Some(utterance) = contexts.get(&sample.id) {
            sample.context_utterance = Some(utterance.clone());
        }
    }
    Ok(())
}
