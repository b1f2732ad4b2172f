//! Boundary F-scores for prosodic structure prediction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::align_slices;
use crate::markup::{parse_annotated, AnnotatedSentence, ParsePolicy, ProsodyLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// A boundary of level m counts at every level ≤ m.
    #[default]
    Cumulative,
    /// A boundary counts only at its own level.
    Exact,
}

impl CountMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cumulative => "cumulative",
            Self::Exact => "exact",
        }
    }

    fn hits(self, boundary: ProsodyLevel, level: ProsodyLevel) -> bool {
        match self {
            Self::Cumulative => boundary >= level,
            Self::Exact => boundary == level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Pool counts over the corpus, then score.
    #[default]
    Micro,
    /// Score each sample, then average.
    Macro,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Micro => "micro",
            Self::Macro => "macro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("predicted text {pred:?} differs from reference text {reference:?}")]
    TextMismatch { pred: String, reference: String },
    #[error("no samples to score")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp > 0 {
            self.tp as f64 / (self.tp + self.fp) as f64
        } else if self.fn_ == 0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ > 0 {
            self.tp as f64 / (self.tp + self.fn_) as f64
        } else {
            1.0
        }
    }

    /// Harmonic mean of precision and recall; 1 when neither side has a
    /// boundary at this level.
    pub fn f_score(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.tp, self.fn_, self.fp)
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

/// Counts for PW, PPH and IPH, in that order.
pub type LevelCounts = [Counts; 3];

fn add_levels(acc: &mut LevelCounts, other: &LevelCounts) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += *b;
    }
}

fn tally(acc: &mut LevelCounts, pred: ProsodyLevel, reference: ProsodyLevel, mode: CountMode) {
    for (slot, level) in acc.iter_mut().zip(ProsodyLevel::SCORED) {
        match (mode.hits(pred, level), mode.hits(reference, level)) {
            (true, true) => slot.tp += 1,
            (true, false) => slot.fp += 1,
            (false, true) => slot.fn_ += 1,
            (false, false) => {}
        }
    }
}

pub fn boundary_counts(
    pred: &AnnotatedSentence,
    reference: &AnnotatedSentence,
    mode: CountMode,
) -> Result<LevelCounts, EvalError> {
    if pred.chars() != reference.chars() {
        return Err(EvalError::TextMismatch {
            pred: pred.text(),
            reference: reference.text(),
        });
    }
    let mut counts = LevelCounts::default();
    for (&p, &r) in pred.boundaries().iter().zip(reference.boundaries()) {
        tally(&mut counts, p, r, mode);
    }
    Ok(counts)
}

/// Boundary counts when the predicted text drifted from the reference.
///
/// Characters are aligned by LCS. A reference gap is scored against the
/// predicted gap only when both flanking characters are aligned to adjacent
/// predicted characters. Reference boundaries at any other gap are misses,
/// and predicted boundaries at gaps with no scored counterpart are false
/// alarms.
pub fn aligned_boundary_counts(
    pred: &AnnotatedSentence,
    reference: &AnnotatedSentence,
    mode: CountMode,
) -> (LevelCounts, f64) {
    if pred.chars() == reference.chars() {
        let counts = boundary_counts(pred, reference, mode).expect("texts are equal");
        return (counts, 1.0);
    }
    let alignment = align_slices(reference.chars(), pred.chars());
    let ref_to_pred = alignment.ref_to_pred(reference.len());
    let (n, m) = (reference.len(), pred.len());
    let mut pred_gap_scored = vec![false; m];
    let mut counts = LevelCounts::default();
    for i in 0..n {
        let partner = match ref_to_pred[i] {
            Some(j) if i + 1 == n && j + 1 == m => Some(j),
            Some(j) if i + 1 < n && ref_to_pred[i + 1] == Some(j + 1) => Some(j),
            _ => None,
        };
        let pred_level = match partner {
            Some(j) => {
                pred_gap_scored[j] = true;
                pred.boundaries()[j]
            }
            None => ProsodyLevel::None,
        };
        tally(&mut counts, pred_level, reference.boundaries()[i], mode);
    }
    for (j, scored) in pred_gap_scored.iter().enumerate() {
        if !scored {
            tally(&mut counts, pred.boundaries()[j], ProsodyLevel::None, mode);
        }
    }
    (counts, alignment.fidelity)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub level: ProsodyLevelName,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProsodyLevelName {
    PW,
    PPH,
    IPH,
}

impl ProsodyLevelName {
    const ALL: [ProsodyLevelName; 3] = [Self::PW, Self::PPH, Self::IPH];
}

/// Per-level precision/recall/F (fractions in [0, 1]) and their average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub levels: [LevelScore; 3],
    /// Unweighted mean of the three level F-scores.
    pub average_f: f64,
}

impl LevelScores {
    pub fn from_counts(counts: &LevelCounts) -> Self {
        let levels = std::array::from_fn(|i| {
            let c = counts[i];
            LevelScore {
                level: ProsodyLevelName::ALL[i],
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                precision: c.precision(),
                recall: c.recall(),
                f_score: c.f_score(),
            }
        });
        Self::with_levels(levels)
    }

    fn with_levels(levels: [LevelScore; 3]) -> Self {
        let average_f = levels.iter().map(|l| l.f_score).sum::<f64>() / 3.0;
        Self { levels, average_f }
    }

    pub fn f_scores(&self) -> [f64; 3] {
        self.levels.map(|l| l.f_score)
    }

    /// Element-wise mean (used to average repeated demo draws).
    pub fn mean(all: &[LevelScores]) -> Option<Self> {
        if all.is_empty() {
            return None;
        }
        let k = all.len() as f64;
        let mut levels = all[0].levels;
        for (i, level) in levels.iter_mut().enumerate() {
            level.tp = all.iter().map(|s| s.levels[i].tp).sum();
            level.fp = all.iter().map(|s| s.levels[i].fp).sum();
            level.fn_ = all.iter().map(|s| s.levels[i].fn_).sum();
            level.precision = all.iter().map(|s| s.levels[i].precision).sum::<f64>() / k;
            level.recall = all.iter().map(|s| s.levels[i].recall).sum::<f64>() / k;
            level.f_score = all.iter().map(|s| s.levels[i].f_score).sum::<f64>() / k;
        }
        Some(Self::with_levels(levels))
    }
}

/// Scoring details for one sample of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub counts: LevelCounts,
    pub fidelity: f64,
    pub parsable: bool,
}

pub fn score_sample(pred: Option<&str>, reference: &AnnotatedSentence, mode: CountMode) -> SampleScore {
    let parsed = pred.and_then(|text| parse_annotated(text, ParsePolicy::Lenient).ok());
    match parsed {
        Some(pred) => {
            let (counts, fidelity) = aligned_boundary_counts(&pred, reference, mode);
            SampleScore { counts, fidelity, parsable: true }
        }
        None => {
            let empty = AnnotatedSentence::new(
                reference.chars().to_vec(),
                vec![ProsodyLevel::None; reference.len()],
            )
            .expect("reference is valid");
            let counts = boundary_counts(&empty, reference, mode).expect("same text");
            SampleScore { counts, fidelity: 0.0, parsable: false }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusScores {
    pub mode: CountMode,
    pub aggregation: Aggregation,
    pub scores: LevelScores,
    pub mean_fidelity: f64,
    pub unparsable: usize,
    pub samples: usize,
}

/// Scores `(prediction, reference)` markup pairs.
///
/// A `None` prediction (model error) is treated like an unparsable one:
/// every reference boundary is a miss. References are parsed leniently.
pub fn corpus_fscore<'a, I>(samples: I, mode: CountMode, aggregation: Aggregation) -> Result<CorpusScores, EvalError>
where
    I: IntoIterator<Item = (Option<&'a str>, &'a str)>,
{
    let mut scored = Vec::new();
    for (pred, reference) in samples {
        // an unparsable reference has no boundaries to score
        let Ok(reference) = parse_annotated(reference, ParsePolicy::Lenient) else {
            continue;
        };
        scored.push(score_sample(pred, &reference, mode));
    }
    aggregate_samples(&scored, mode, aggregation)
}

pub fn aggregate_samples(scored: &[SampleScore], mode: CountMode, aggregation: Aggregation) -> Result<CorpusScores, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let scores = match aggregation {
        Aggregation::Micro => {
            let mut pooled = LevelCounts::default();
            for s in scored {
                add_levels(&mut pooled, &s.counts);
            }
            LevelScores::from_counts(&pooled)
        }
        Aggregation::Macro => {
            let per_sample: Vec<LevelScores> = scored.iter().map(|s| LevelScores::from_counts(&s.counts)).collect();
            LevelScores::mean(&per_sample).expect("non-empty")
        }
    };
    Ok(CorpusScores {
        mode,
        aggregation,
        scores,
        mean_fidelity: scored.iter().map(|s| s.fidelity).sum::<f64>() / scored.len() as f64,
        unparsable: scored.iter().filter(|s| !s.parsable).count(),
        samples: scored.len(),
    })
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub variation: String,
    pub scores: LevelScores,
}

/// Plain-text table with columns Model / Variation / PW / PPH / IPH / Average,
/// F-scores ×100 with two decimals.
pub fn render_table(rows: &[BenchmarkRow]) -> String {
    let header = ["Model", "Variation", "PW #1", "PPH #2", "IPH #3", "Average"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|row| {
            let f = row.scores.f_scores();
            [
                row.model.clone(),
                row.variation.clone(),
                format!("{:.2}", f[0] * 100.0),
                format!("{:.2}", f[1] * 100.0),
                format!("{:.2}", f[2] * 100.0),
                format!("{:.2}", row.scores.average_f * 100.0),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let mut first = true;
        for (i, cell) in cells.iter().enumerate() {
            if !first {
                out.push_str("  ");
            }
            first = false;
            let pad = widths[i] - cell.chars().count();
            if i < 2 {
                out.push_str(cell);
                out.extend(std::iter::repeat_n(' ', pad));
            } else {
                out.extend(std::iter::repeat_n(' ', pad));
                out.push_str(cell);
            }
        }
        let trimmed = out.trim_end().len();
        out.truncate(trimmed);
        out.push('\n');
    };
    line(&mut out, &header.map(String::from));
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for row in &body {
        line(&mut out, row);
    }
    out
}
