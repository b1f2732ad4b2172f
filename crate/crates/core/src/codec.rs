//! Text encoding of a response together with its per-character features.
//!
//! ```text
//! <response text>
//! ###FEATURES###
//! [{"char":"好","dur_ms":200,"pinyin":"hao3","prosody":0,"d_high":1.61,"d_low":0.00},...]
//! ```
//!
//! Keys appear in exactly this order, without whitespace. `dur_ms` and
//! `prosody` are bare integers; D-values carry two decimals, or `null` for
//! characters without voiced frames.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::features::{FeatureRecord, FeatureSequence};
use crate::markup::ProsodyLevel;

pub const SEPARATOR: &str = "###FEATURES###";

const KEYS: [&str; 6] = ["char", "dur_ms", "pinyin", "prosody", "d_high", "d_low"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("response {response:?} does not match feature characters {features:?}")]
    ResponseFeatureMismatch { response: String, features: String },
    #[error("feature sequence is empty")]
    EmptyFeatures,
    #[error("no feature records could be recovered")]
    Unparsable,
    #[error("not a canonical encoding: {0}")]
    StrictViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodePolicy {
    Strict,
    #[default]
    Lenient,
}

/// Formats a D-value with two decimals; negative zero prints as `0.00`.
pub fn format_d_value(d: f64) -> String {
    let s = format!("{d:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn push_json_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings serialize"));
}

fn push_optional_d(out: &mut String, d: Option<f64>) {
    match d {
        Some(d) => out.push_str(&format_d_value(d)),
        None => out.push_str("null"),
    }
}

fn push_record(out: &mut String, r: &FeatureRecord) {
    out.push_str("{\"char\":");
    push_json_str(out, r.ch.encode_utf8(&mut [0; 4]));
    let _ = write!(out, ",\"dur_ms\":{},\"pinyin\":", r.duration_ms);
    push_json_str(out, &r.pinyin);
    let _ = write!(out, ",\"prosody\":{},\"d_high\":", r.prosody.as_u8());
    push_optional_d(out, r.pitch_high_d);
    out.push_str(",\"d_low\":");
    push_optional_d(out, r.pitch_low_d);
    out.push('}');
}

pub fn encode_records(features: &FeatureSequence) -> String {
    let mut out = String::with_capacity(features.len() * 80 + 2);
    out.push('[');
    for (i, r) in features.records.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_record(&mut out, r);
    }
    out.push(']');
    out
}

pub fn encode_target(response: &str, features: &FeatureSequence) -> Result<String, CodecError> {
    if features.is_empty() {
        return Err(CodecError::EmptyFeatures);
    }
    if response != features.text() {
        return Err(CodecError::ResponseFeatureMismatch {
            response: response.to_string(),
            features: features.text(),
        });
    }
    Ok(format!("{response}\n{SEPARATOR}\n{}", encode_records(features)))
}

/// A ground-truth response with its features and their encoding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointTarget {
    pub response_text: String,
    pub features: FeatureSequence,
    pub encoded: String,
}

impl JointTarget {
    pub fn new(response_text: impl Into<String>, features: FeatureSequence) -> Result<Self, CodecError> {
        let response_text = response_text.into();
        let encoded = encode_target(&response_text, &features)?;
        Ok(Self { response_text, features, encoded })
    }
}

/// A record recovered from model output; absent fields were missing or invalid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodedRecord {
    pub ch: char,
    pub duration_ms: Option<u32>,
    pub pinyin: Option<String>,
    pub prosody: Option<ProsodyLevel>,
    pub pitch_high_d: Option<f64>,
    pub pitch_low_d: Option<f64>,
}

impl DecodedRecord {
    pub fn to_feature_record(&self) -> Option<FeatureRecord> {
        Some(FeatureRecord {
            ch: self.ch,
            duration_ms: self.duration_ms?,
            pinyin: self.pinyin.clone()?,
            prosody: self.prosody?,
            pitch_high_d: self.pitch_high_d,
            pitch_low_d: self.pitch_low_d,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    MissingSeparator,
    /// No feature array found at all.
    MissingArray,
    /// Array not closed; only complete records before `offset` were kept.
    Truncated { offset: usize },
    TrailingGarbage { offset: usize },
    UnexpectedToken { offset: usize },
    InvalidRecord { record: usize, reason: String },
    MissingKey { record: usize, key: &'static str },
    InvalidValue { record: usize, key: &'static str },
    UnknownKey { record: usize, key: String },
    ProsodyClamped { record: usize, value: i64 },
    MultiCharRecord { record: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decoded {
    pub response: String,
    pub records: Vec<DecodedRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Decoded {
    /// Complete feature sequence, if no record lacks a required field.
    pub fn features(&self) -> Option<FeatureSequence> {
        self.records.iter().map(DecodedRecord::to_feature_record).collect::<Option<Vec<_>>>().map(FeatureSequence::new)
    }

    pub fn text(&self) -> String {
        self.records.iter().map(|r| r.ch).collect()
    }
}

/// Lenient decoding never fails: whatever complete records precede damage
/// are returned, possibly none, with diagnostics. Strict decoding accepts
/// only canonical encodings.
pub fn decode_target(text: &str, policy: DecodePolicy) -> Result<Decoded, CodecError> {
    let decoded = decode_lenient(text);
    if policy == DecodePolicy::Lenient {
        return Ok(decoded);
    }
    if decoded.records.is_empty() {
        return Err(CodecError::Unparsable);
    }
    if let Some(d) = decoded.diagnostics.first() {
        return Err(CodecError::StrictViolation(format!("{d:?}")));
    }
    let features = decoded
        .features()
        .ok_or_else(|| CodecError::StrictViolation("incomplete record".into()))?;
    let canonical = encode_target(&decoded.response, &features)?;
    if canonical != text {
        return Err(CodecError::StrictViolation("bytes differ from canonical form".into()));
    }
    Ok(decoded)
}

fn decode_lenient(text: &str) -> Decoded {
    let mut diagnostics = Vec::new();
    let (response, array_start) = match text.find(SEPARATOR) {
        Some(pos) => {
            let rest = pos + SEPARATOR.len();
            (text[..pos].trim().to_string(), text[rest..].find('[').map(|p| rest + p))
        }
        None => {
            diagnostics.push(Diagnostic::MissingSeparator);
            match find_array_start(text) {
                Some(start) => (text[..start].trim().to_string(), Some(start)),
                None => (text.trim().to_string(), None),
            }
        }
    };
    let records = match array_start {
        Some(start) => scan_array(text, start, &mut diagnostics),
        None => {
            diagnostics.push(Diagnostic::MissingArray);
            Vec::new()
        }
    };
    Decoded { response, records, diagnostics }
}

/// Byte offset of the first `[` whose next non-space character is `{`.
fn find_array_start(text: &str) -> Option<usize> {
    text.match_indices('[').map(|(i, _)| i).find(|&i| text[i + 1..].trim_start().starts_with('{'))
}

/// End offset (exclusive) of the JSON object starting at `start`, honoring
/// strings and escapes. `None` if the object never closes.
fn object_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn scan_array(text: &str, array_start: usize, diagnostics: &mut Vec<Diagnostic>) -> Vec<DecodedRecord> {
    let bytes = text.as_bytes();
    let mut records = Vec::new();
    let mut pos = array_start + 1;
    let mut index = 0;
    loop {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b',') {
            pos += 1;
        }
        match bytes.get(pos) {
            None => {
                diagnostics.push(Diagnostic::Truncated { offset: pos });
                break;
            }
            Some(b']') => {
                pos += 1;
                if !text[pos..].trim().is_empty() {
                    diagnostics.push(Diagnostic::TrailingGarbage { offset: pos });
                }
                break;
            }
            Some(b'{') => {
                let Some(end) = object_end(bytes, pos) else {
                    diagnostics.push(Diagnostic::Truncated { offset: pos });
                    break;
                };
                match serde_json::from_str::<Map<String, Value>>(&text[pos..end]) {
                    Ok(object) => {
                        if let Some(record) = convert_record(index, &object, diagnostics) {
                            records.push(record);
                        }
                    }
                    Err(e) => diagnostics.push(Diagnostic::InvalidRecord { record: index, reason: e.to_string() }),
                }
                index += 1;
                pos = end;
            }
            Some(_) => {
                diagnostics.push(Diagnostic::UnexpectedToken { offset: pos });
                break;
            }
        }
    }
    records
}

fn number_field(
    object: &Map<String, Value>,
    key: &'static str,
    record: usize,
    diagnostics: &mut Vec<Diagnostic>,
) -> Option<f64> {
    match object.get(key) {
        None => {
            diagnostics.push(Diagnostic::MissingKey { record, key });
            None
        }
        Some(Value::Null) => None,
        Some(v) => {
            let n = v.as_f64().filter(|n| n.is_finite());
            if n.is_none() {
                diagnostics.push(Diagnostic::InvalidValue { record, key });
            }
            n
        }
    }
}

fn convert_record(record: usize, object: &Map<String, Value>, diagnostics: &mut Vec<Diagnostic>) -> Option<DecodedRecord> {
    let ch = match object.get("char").and_then(Value::as_str) {
        Some(s) => {
            let mut chars = s.chars();
            let Some(first) = chars.next() else {
                diagnostics.push(Diagnostic::InvalidRecord { record, reason: "empty char".into() });
                return None;
            };
            if chars.next().is_some() {
                diagnostics.push(Diagnostic::MultiCharRecord { record });
            }
            first
        }
        None => {
            diagnostics.push(Diagnostic::InvalidRecord { record, reason: "no char key".into() });
            return None;
        }
    };
    for key in object.keys() {
        if !KEYS.contains(&key.as_str()) {
            diagnostics.push(Diagnostic::UnknownKey { record, key: key.clone() });
        }
    }

    let duration_ms = number_field(object, "dur_ms", record, diagnostics).map(|d| d.round().clamp(1.0, u32::MAX as f64) as u32);
    let pinyin = match object.get("pinyin") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            diagnostics.push(Diagnostic::InvalidValue { record, key: "pinyin" });
            None
        }
        None => {
            diagnostics.push(Diagnostic::MissingKey { record, key: "pinyin" });
            None
        }
    };
    let prosody = number_field(object, "prosody", record, diagnostics).map(|p| {
        let value = p.round() as i64;
        let clamped = value.clamp(0, 3);
        if clamped != value {
            diagnostics.push(Diagnostic::ProsodyClamped { record, value });
        }
        ProsodyLevel::from_u8(clamped as u8).expect("clamped to 0..=3")
    });
    let pitch_high_d = number_field(object, "d_high", record, diagnostics);
    let pitch_low_d = number_field(object, "d_low", record, diagnostics);

    Some(DecodedRecord { ch, duration_ms, pinyin, prosody, pitch_high_d, pitch_low_d })
}
