//! Conversion of DataBaker-style release files into the corpus layout read by
//! [`crate::corpus::load_corpus`].
//!
//! Two native inputs are handled:
//! * the prosody labeling file, where each sample is an id line
//!   (`000001<TAB>卡尔普#2陪外孙#1玩滑梯#4。`) followed by an indented pinyin line;
//! * Praat TextGrid files holding a phone interval tier.
//!
//! Character spans are the union of the phones that spell each syllable.

use thiserror::Error;

use crate::corpus::IndexEntry;
use crate::features::CharSpan;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Labels { line: usize, reason: String },
    #[error("TextGrid: {0}")]
    TextGrid(String),
    #[error("syllable {index} ({syllable:?}) cannot be spelled from the remaining phones")]
    PhoneMismatch { index: usize, syllable: String },
    #[error("{unused} phones left over after the last syllable")]
    TrailingPhones { unused: usize },
    #[error("{chars} characters but {syllables} syllables")]
    LengthMismatch { chars: usize, syllables: usize },
}

fn is_punctuation(c: char) -> bool {
    (c.is_ascii_punctuation() && c != '#')
        || matches!(
            c,
            '。' | '，' | '、' | '；' | '：' | '？' | '！' | '“' | '”' | '‘' | '’' | '（' | '）' | '《' | '》'
                | '…' | '—' | '·' | '「' | '」' | '『' | '』' | '【' | '】' | '～'
        )
}

/// Removes punctuation while keeping markers and characters.
pub fn strip_punctuation(text: &str) -> String {
    text.chars().filter(|&c| !is_punctuation(c)).collect()
}

/// Parses a prosody labeling file into index entries.
pub fn parse_prosody_labels(text: &str) -> Result<Vec<IndexEntry>, IngestError> {
    let mut entries = Vec::new();
    let mut pending: Option<(usize, String, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let indented = line.starts_with(char::is_whitespace);
        match (&mut pending, indented) {
            (None, false) => {
                let (id, annotated) = line
                    .split_once(['\t', ' '])
                    .ok_or_else(|| IngestError::Labels { line: line_no, reason: "expected id and text".into() })?;
                pending = Some((line_no, id.trim().to_string(), strip_punctuation(annotated.trim())));
            }
            (Some(_), true) => {
                let (_, id, annotated) = pending.take().expect("checked");
                entries.push(IndexEntry {
                    id,
                    annotated,
                    pinyin: line.split_whitespace().map(str::to_string).collect(),
                });
            }
            (None, true) => {
                return Err(IngestError::Labels { line: line_no, reason: "pinyin line without a text line".into() });
            }
            (Some((text_line, _, _)), false) => {
                return Err(IngestError::Labels {
                    line: *text_line,
                    reason: "text line is not followed by a pinyin line".into(),
                });
            }
        }
    }
    if let Some((line, _, _)) = pending {
        return Err(IngestError::Labels { line, reason: "text line is not followed by a pinyin line".into() });
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

/// Reads the intervals of a TextGrid tier (long text format). `tier` selects
/// by name; `None` takes the first interval tier.
pub fn parse_textgrid_tier(text: &str, tier: Option<&str>) -> Result<Vec<Interval>, IngestError> {
    let mut current_name: Option<String> = None;
    let mut in_interval_tier = false;
    let mut found = false;
    let mut intervals = Vec::new();
    let (mut xmin, mut xmax) = (None, None);

    for line in text.lines() {
        let line = line.trim();
        if line.starts_with("item [") || line.starts_with("item[") {
            if found {
                break;
            }
            current_name = None;
            in_interval_tier = false;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "class" => in_interval_tier = value.trim_matches('"') == "IntervalTier",
            "name" => {
                let name = value.trim_matches('"').to_string();
                found = in_interval_tier && tier.is_none_or(|t| t == name);
                current_name = Some(name);
            }
            "xmin" if found => xmin = value.parse::<f64>().ok(),
            "xmax" if found => xmax = value.parse::<f64>().ok(),
            "text" if found => {
                let (Some(start), Some(end)) = (xmin.take(), xmax.take()) else {
                    return Err(IngestError::TextGrid("interval text before its bounds".into()));
                };
                intervals.push(Interval { start, end, label: value.trim_matches('"').to_string() });
            }
            _ => {}
        }
    }
    if !found {
        let wanted = tier.unwrap_or("<first interval tier>");
        return Err(IngestError::TextGrid(format!("tier {wanted} not found (last seen: {current_name:?})")));
    }
    Ok(intervals)
}

fn letters(s: &str) -> String {
    s.chars().filter(|c| c.is_alphabetic()).flat_map(char::to_lowercase).collect()
}

fn is_silence(label: &str) -> bool {
    matches!(label.trim(), "" | "sil" | "sp" | "sp1" | "spn" | "pau" | "#")
}

/// Groups phone intervals into one span per syllable. A syllable owns the
/// consecutive phones whose letters spell it (`h` + `ao3` → `hao3`).
pub fn char_spans_from_phones(
    chars: &[char],
    pinyin: &[String],
    phones: &[Interval],
) -> Result<Vec<CharSpan>, IngestError> {
    if chars.len() != pinyin.len() {
        return Err(IngestError::LengthMismatch { chars: chars.len(), syllables: pinyin.len() });
    }
    let voiced: Vec<&Interval> = phones.iter().filter(|p| !is_silence(&p.label)).collect();
    let mut spans = Vec::with_capacity(chars.len());
    let mut next = 0;
    for (index, (&ch, syllable)) in chars.iter().zip(pinyin).enumerate() {
        let target = letters(syllable);
        let mut spelled = String::new();
        let start_phone = next;
        while spelled.len() < target.len() && next < voiced.len() {
            spelled.push_str(&letters(&voiced[next].label));
            next += 1;
        }
        if spelled != target || start_phone == next {
            return Err(IngestError::PhoneMismatch { index, syllable: syllable.clone() });
        }
        spans.push(CharSpan {
            ch,
            start: voiced[start_phone].start,
            end: voiced[next - 1].end,
            pinyin: syllable.clone(),
        });
    }
    if next != voiced.len() {
        return Err(IngestError::TrailingPhones { unused: voiced.len() - next });
    }
    Ok(spans)
}

/// Interval file body in the corpus format.
pub fn format_intervals(spans: &[CharSpan]) -> String {
    spans
        .iter()
        .map(|s| format!("{}\t{:.3}\t{:.3}\t{}\n", s.ch, s.start, s.end, s.pinyin))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::parse_intervals;

    const LABELS: &str = "000001\t卡尔普#2陪外孙#1玩滑梯#4。\n\tka2 er2 pu3 pei2 wai4 sun1 wan2 hua2 ti1\n000002\t假语村言#2别再#1拥抱我#4。\n\tjia2 yu3 cun1 yan2 bie2 zai4 yong1 bao4 wo3\n";

    #[test]
    fn parses_label_pairs() {
        let entries = parse_prosody_labels(LABELS).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].id, "000001");
        assert_eq!(entries[0].annotated, "卡尔普#2陪外孙#1玩滑梯#4");
        assert_eq!(entries[0].pinyin.len(), 9);
        assert_eq!(entries[1].to_line(), "000002\t假语村言#2别再#1拥抱我#4\tjia2 yu3 cun1 yan2 bie2 zai4 yong1 bao4 wo3");
    }

    #[test]
    fn rejects_unpaired_lines() {
        assert!(parse_prosody_labels("000001\t你好#4\n000002\t世界#4\n\tshi4 jie4\n").is_err());
        assert!(parse_prosody_labels("\tni3 hao3\n").is_err());
        assert!(parse_prosody_labels("000001\t你好#4\n").is_err());
    }

    const GRID: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"
xmin = 0
xmax = 1.0
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 1.0
        intervals: size = 6
        intervals [1]:
            xmin = 0
            xmax = 0.1
            text = "sil"
        intervals [2]:
            xmin = 0.1
            xmax = 0.18
            text = "n"
        intervals [3]:
            xmin = 0.18
            xmax = 0.33
            text = "i3"
        intervals [4]:
            xmin = 0.33
            xmax = 0.4
            text = "h"
        intervals [5]:
            xmin = 0.4
            xmax = 0.52
            text = "ao3"
        intervals [6]:
            xmin = 0.52
            xmax = 1.0
            text = "sil"
"#;

    #[test]
    fn textgrid_to_char_spans() {
        let phones = parse_textgrid_tier(GRID, Some("phones")).unwrap();
        assert_eq!(phones.len(), 6);
        let spans = char_spans_from_phones(&['你', '好'], &["ni3".into(), "hao3".into()], &phones).unwrap();
        assert_eq!(spans[0].start, 0.1);
        assert_eq!(spans[0].end, 0.33);
        assert_eq!(spans[1].start, 0.33);
        assert_eq!(spans[1].end, 0.52);
        let text = format_intervals(&spans);
        assert_eq!(text, "你\t0.100\t0.330\tni3\n好\t0.330\t0.520\thao3\n");
        assert_eq!(parse_intervals(&text).unwrap().len(), 2);
        assert!(parse_textgrid_tier(GRID, Some("words")).is_err());
    }

    #[test]
    fn phone_spelling_errors() {
        let phones = parse_textgrid_tier(GRID, None).unwrap();
        assert!(matches!(
            char_spans_from_phones(&['你', '好'], &["ni3".into(), "hai3".into()], &phones),
            Err(IngestError::PhoneMismatch { index: 1, .. })
        ));
        assert!(matches!(
            char_spans_from_phones(&['你'], &["ni3".into()], &phones),
            Err(IngestError::TrailingPhones { unused: 2 })
        ));
    }
}
