//! Per-character linguistic features: duration, pinyin, prosody level and the
//! pitch range of each character expressed as D-values.
//!
//! The D-value of a frequency `f` relative to a reference `f0` is
//! `5 · log2(f / f0)`, so one octave spans five units.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusSample;
use crate::markup::ProsodyLevel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("no voiced frames")]
    NoVoicedFrames,
    #[error("{chars} characters, {spans} spans, {pinyin} pinyin syllables")]
    LengthMismatch { chars: usize, spans: usize, pinyin: usize },
    #[error("span {index} is for {found:?} but the sentence has {expected:?}")]
    CharMismatch { index: usize, expected: char, found: char },
    #[error("sample has no character intervals")]
    MissingIntervals,
    #[error("sample has no pitch track")]
    MissingPitch,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FeatureError {
    fn from(e: std::io::Error) -> Self {
        FeatureError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchFrame {
    pub time: f64,
    /// `None` for unvoiced frames.
    pub hz: Option<f64>,
}

/// Frame-level F0 contour with strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    frames: Vec<PitchFrame>,
    frame_shift: f64,
}

const DEFAULT_FRAME_SHIFT: f64 = 0.01;

impl PitchTrack {
    /// Builds a track, inferring the frame shift from the first time step.
    pub fn new(frames: Vec<PitchFrame>) -> Result<Self, FeatureError> {
        for (i, pair) in frames.windows(2).enumerate() {
            if !(pair[1].time > pair[0].time) {
                return Err(FeatureError::Parse {
                    line: i + 2,
                    reason: "frame times must be strictly increasing".into(),
                });
            }
        }
        for (i, frame) in frames.iter().enumerate() {
            if !frame.time.is_finite() {
                return Err(FeatureError::Parse { line: i + 1, reason: "non-finite time".into() });
            }
            if let Some(hz) = frame.hz {
                if !(hz.is_finite() && hz > 0.0) {
                    return Err(FeatureError::NonPositiveFrequency(hz));
                }
            }
        }
        let frame_shift = match frames.as_slice() {
            [a, b, ..] => b.time - a.time,
            _ => DEFAULT_FRAME_SHIFT,
        };
        Ok(Self { frames, frame_shift })
    }

    pub fn frames(&self) -> &[PitchFrame] {
        &self.frames
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().filter_map(|f| f.hz)
    }

    /// Voiced frequencies of frames with `start <= time < end`.
    pub fn voiced_in(&self, start: f64, end: f64) -> impl Iterator<Item = f64> + '_ {
        let first = self.frames.partition_point(|f| f.time < start);
        self.frames[first..]
            .iter()
            .take_while(move |f| f.time < end)
            .filter_map(|f| f.hz)
    }

    /// Same track with every voiced frequency multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|f| PitchFrame { time: f.time, hz: f.hz.map(|hz| hz * factor) })
            .collect();
        Self { frames, frame_shift: self.frame_shift }
    }

    /// Parses `time_sec<TAB>f_hz` lines; `f_hz = 0` is unvoiced.
    pub fn parse_tsv(text: &str) -> Result<Self, FeatureError> {
        let mut frames = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(time), Some(hz), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(FeatureError::Parse { line: i + 1, reason: "expected 2 tab-separated columns".into() });
            };
            let time: f64 = parse_number(time, i + 1)?;
            let hz: f64 = parse_number(hz, i + 1)?;
            if hz < 0.0 {
                return Err(FeatureError::NonPositiveFrequency(hz));
            }
            frames.push(PitchFrame { time, hz: (hz > 0.0).then_some(hz) });
        }
        Self::new(frames)
    }

    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        Self::parse_tsv(&std::fs::read_to_string(path)?)
    }
}

fn parse_number(s: &str, line: usize) -> Result<f64, FeatureError> {
    s.trim().parse().map_err(|_| FeatureError::Parse { line, reason: format!("not a number: {s:?}") })
}

/// Time interval and pinyin of one character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharSpan {
    pub ch: char,
    pub start: f64,
    pub end: f64,
    pub pinyin: String,
}

/// Parses `char<TAB>start_sec<TAB>end_sec<TAB>pinyin` lines and checks that
/// spans are non-empty, ordered and non-overlapping.
pub fn parse_intervals(text: &str) -> Result<Vec<CharSpan>, FeatureError> {
    let mut spans: Vec<CharSpan> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [ch, start, end, pinyin] = cols.as_slice() else {
            return Err(FeatureError::Parse { line: line_no, reason: "expected 4 tab-separated columns".into() });
        };
        let mut chars = ch.trim().chars();
        let (Some(ch), None) = (chars.next(), chars.next()) else {
            return Err(FeatureError::Parse { line: line_no, reason: format!("expected one character, got {ch:?}") });
        };
        let start = parse_number(start, line_no)?;
        let end = parse_number(end, line_no)?;
        if !(0.0 <= start && start < end) {
            return Err(FeatureError::Parse { line: line_no, reason: format!("invalid interval [{start}, {end})") });
        }
        if spans.last().is_some_and(|prev| prev.end > start) {
            return Err(FeatureError::Parse { line: line_no, reason: "interval overlaps the previous one".into() });
        }
        spans.push(CharSpan { ch, start, end, pinyin: pinyin.trim().to_string() });
    }
    Ok(spans)
}

pub fn read_intervals(path: &Path) -> Result<Vec<CharSpan>, FeatureError> {
    parse_intervals(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    #[default]
    GeometricMeanVoiced,
    Fixed,
}

/// Anchor frequency of the D-value scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceF0 {
    f0: f64,
    method: ReferenceMethod,
}

impl ReferenceF0 {
    pub fn fixed(f0: f64) -> Result<Self, FeatureError> {
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(FeatureError::NonPositiveFrequency(f0));
        }
        Ok(Self { f0, method: ReferenceMethod::Fixed })
    }

    /// `exp(mean(ln f))` over every voiced frame of every track.
    pub fn geometric_mean<'a, I>(tracks: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a PitchTrack>,
    {
        let (mut sum, mut count) = (0.0f64, 0usize);
        for track in tracks {
            for f in track.voiced() {
                sum += f.ln();
                count += 1;
            }
        }
        if count == 0 {
            return Err(FeatureError::NoVoicedFrames);
        }
        Ok(Self { f0: (sum / count as f64).exp(), method: ReferenceMethod::GeometricMeanVoiced })
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn method(&self) -> ReferenceMethod {
        self.method
    }
}

pub fn reference_f0(track: &PitchTrack) -> Result<ReferenceF0, FeatureError> {
    ReferenceF0::geometric_mean([track])
}

pub fn hz_to_d(hz: f64, reference: ReferenceF0) -> Result<f64, FeatureError> {
    if !(hz > 0.0) {
        return Err(FeatureError::NonPositiveFrequency(hz));
    }
    Ok(5.0 * (hz / reference.f0).log2())
}

pub fn d_to_hz(d: f64, reference: ReferenceF0) -> f64 {
    reference.f0 * (d / 5.0).exp2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub ch: char,
    pub duration_ms: u32,
    pub pinyin: String,
    pub prosody: ProsodyLevel,
    /// D-value of the highest voiced frame, `None` without voiced frames.
    pub pitch_high_d: Option<f64>,
    pub pitch_low_d: Option<f64>,
}

/// Feature records of a sentence, one per character.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSequence {
    pub records: Vec<FeatureRecord>,
}

impl FeatureSequence {
    pub fn new(records: Vec<FeatureRecord>) -> Self {
        Self { records }
    }

    pub fn text(&self) -> String {
        self.records.iter().map(|r| r.ch).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn duration_ms(start: f64, end: f64) -> u32 {
    (((end - start) * 1000.0).round() as u32).max(1)
}

pub fn extract_char_features(
    span: &CharSpan,
    track: &PitchTrack,
    reference: ReferenceF0,
    prosody: ProsodyLevel,
) -> FeatureRecord {
    let mut range: Option<(f64, f64)> = None;
    for hz in track.voiced_in(span.start, span.end) {
        range = Some(match range {
            Some((lo, hi)) => (lo.min(hz), hi.max(hz)),
            None => (hz, hz),
        });
    }
    let to_d = |hz: f64| hz_to_d(hz, reference).expect("voiced frames are positive");
    FeatureRecord {
        ch: span.ch,
        duration_ms: duration_ms(span.start, span.end),
        pinyin: span.pinyin.clone(),
        prosody,
        pitch_high_d: range.map(|(_, hi)| to_d(hi)),
        pitch_low_d: range.map(|(lo, _)| to_d(lo)),
    }
}

pub fn build_feature_sequence(sample: &CorpusSample, reference: ReferenceF0) -> Result<FeatureSequence, FeatureError> {
    let spans = sample.spans.as_ref().ok_or(FeatureError::MissingIntervals)?;
    let track = sample.pitch.as_ref().ok_or(FeatureError::MissingPitch)?;
    let chars = sample.annotated.chars();
    if chars.len() != spans.len() || chars.len() != sample.pinyin.len() {
        return Err(FeatureError::LengthMismatch {
            chars: chars.len(),
            spans: spans.len(),
            pinyin: sample.pinyin.len(),
        });
    }
    let mut records = Vec::with_capacity(chars.len());
    for (index, ((span, &expected), (&prosody, pinyin))) in spans
        .iter()
        .zip(chars)
        .zip(sample.annotated.boundaries().iter().zip(&sample.pinyin))
        .enumerate()
    {
        if span.ch != expected {
            return Err(FeatureError::CharMismatch { index, expected, found: span.ch });
        }
        let mut record = extract_char_features(span, track, reference, prosody);
        // the index file is authoritative for pinyin
        record.pinyin = pinyin.clone();
        records.push(record);
    }
    Ok(FeatureSequence::new(records))
}
