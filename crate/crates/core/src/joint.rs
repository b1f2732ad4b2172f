//! Joint response + feature evaluation: parsable samples, matched characters,
//! and pinyin/prosody agreement among the matched characters.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::align::align_slices;
use crate::codec::{decode_target, DecodePolicy, JointTarget};
use crate::pinyin::same_syllable;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JointError {
    #[error("no results to aggregate")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericField {
    Duration,
    DHigh,
    DLow,
}

impl NumericField {
    pub const ALL: [NumericField; 3] = [Self::Duration, Self::DHigh, Self::DLow];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Duration => "duration",
            Self::DHigh => "d_high",
            Self::DLow => "d_low",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NumericPair {
    pub field: NumericField,
    pub pred: f64,
    #[serde(rename = "ref")]
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct JointSampleResult {
    pub parsable: bool,
    pub matched_chars: usize,
    /// Reference length; 0 for unparsable samples.
    pub ref_chars: usize,
    pub matched_pinyin: usize,
    pub matched_prosody: usize,
    pub numeric_pairs: Vec<NumericPair>,
    pub diagnostics: usize,
}

pub fn eval_joint_sample(pred_text: &str, reference: &JointTarget) -> JointSampleResult {
    let decoded = decode_target(pred_text, DecodePolicy::Lenient).expect("lenient decoding is total");
    if decoded.records.is_empty() {
        return JointSampleResult::default();
    }
    let ref_records = &reference.features.records;
    let ref_chars: Vec<char> = ref_records.iter().map(|r| r.ch).collect();
    let pred_chars: Vec<char> = decoded.records.iter().map(|r| r.ch).collect();
    let alignment = align_slices(&ref_chars, &pred_chars);

    let mut result = JointSampleResult {
        parsable: true,
        matched_chars: alignment.pairs.len(),
        ref_chars: ref_chars.len(),
        diagnostics: decoded.diagnostics.len(),
        ..Default::default()
    };
    for &(ri, pi) in &alignment.pairs {
        let (r, p) = (&ref_records[ri], &decoded.records[pi]);
        if p.pinyin.as_deref().is_some_and(|py| same_syllable(py, &r.pinyin)) {
            result.matched_pinyin += 1;
        }
        if p.prosody == Some(r.prosody) {
            result.matched_prosody += 1;
        }
        let mut push = |field, pred: Option<f64>, reference: Option<f64>| {
            if let (Some(pred), Some(reference)) = (pred, reference) {
                result.numeric_pairs.push(NumericPair { field, pred, reference });
            }
        };
        push(NumericField::Duration, p.duration_ms.map(f64::from), Some(f64::from(r.duration_ms)));
        push(NumericField::DHigh, p.pitch_high_d, r.pitch_high_d);
        push(NumericField::DLow, p.pitch_low_d, r.pitch_low_d);
    }
    result
}

/// Agreement statistics for one numeric field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NumericStats {
    pub field: NumericField,
    pub pairs: usize,
    pub rmse: Option<f64>,
    /// Pearson correlation, absent with fewer than two pairs or zero variance.
    pub pearson_r: Option<f64>,
}

pub fn numeric_stats(field: NumericField, pairs: &[NumericPair]) -> NumericStats {
    let values: Vec<(f64, f64)> = pairs.iter().filter(|p| p.field == field).map(|p| (p.pred, p.reference)).collect();
    let n = values.len();
    if n == 0 {
        return NumericStats { field, pairs: 0, rmse: None, pearson_r: None };
    }
    let nf = n as f64;
    let rmse = (values.iter().map(|(p, r)| (p - r).powi(2)).sum::<f64>() / nf).sqrt();
    let mean_p = values.iter().map(|v| v.0).sum::<f64>() / nf;
    let mean_r = values.iter().map(|v| v.1).sum::<f64>() / nf;
    let (mut cov, mut var_p, mut var_r) = (0.0, 0.0, 0.0);
    for (p, r) in &values {
        cov += (p - mean_p) * (r - mean_r);
        var_p += (p - mean_p).powi(2);
        var_r += (r - mean_r).powi(2);
    }
    let pearson_r = (n >= 2 && var_p > 0.0 && var_r > 0.0).then(|| cov / (var_p * var_r).sqrt());
    NumericStats { field, pairs: n, rmse: Some(rmse), pearson_r }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointReport {
    pub samples: usize,
    pub parsable_rate: f64,
    pub matched_char_rate: f64,
    /// Denominator: matched characters.
    pub matched_pinyin_rate: f64,
    pub matched_prosody_rate: f64,
    pub numeric: Vec<NumericStats>,
    #[serde(skip)]
    pub scatter: Vec<NumericPair>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn aggregate_joint(results: &[JointSampleResult]) -> Result<JointReport, JointError> {
    if results.is_empty() {
        return Err(JointError::EmptyInput);
    }
    let sum = |f: fn(&JointSampleResult) -> usize| results.iter().map(f).sum::<usize>();
    let matched = sum(|r| r.matched_chars);
    let scatter: Vec<NumericPair> = results.iter().flat_map(|r| r.numeric_pairs.iter().copied()).collect();
    Ok(JointReport {
        samples: results.len(),
        parsable_rate: ratio(sum(|r| usize::from(r.parsable)), results.len()),
        matched_char_rate: ratio(matched, sum(|r| r.ref_chars)),
        matched_pinyin_rate: ratio(sum(|r| r.matched_pinyin), matched),
        matched_prosody_rate: ratio(sum(|r| r.matched_prosody), matched),
        numeric: NumericField::ALL.iter().map(|&f| numeric_stats(f, &scatter)).collect(),
        scatter,
    })
}

/// `field,pred,ref` rows.
pub fn scatter_csv(pairs: &[NumericPair]) -> String {
    let mut out = String::from("field,pred,ref\n");
    for p in pairs {
        let _ = writeln!(out, "{},{},{}", p.field.as_str(), p.pred, p.reference);
    }
    out
}

/// Table with one row per split label and the four rate columns (percent).
pub fn render_joint_table(rows: &[(String, JointReport)]) -> String {
    let header = ["Split", "Parsable Samples", "Matched Characters", "Matched Pinyin", "Matched Prosody"];
    let mut widths = header.map(str::len);
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|(label, r)| {
            [
                label.clone(),
                format!("{:.2}%", r.parsable_rate * 100.0),
                format!("{:.2}%", r.matched_char_rate * 100.0),
                format!("{:.2}%", r.matched_pinyin_rate * 100.0),
                format!("{:.2}%", r.matched_prosody_rate * 100.0),
            ]
        })
        .collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut emit = |row: &[String]| {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    };
    emit(&header.map(String::from));
    for row in &cells {
        emit(row);
    }
    out
}
