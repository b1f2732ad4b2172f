//! Prosodic-structure markup.
//!
//! A boundary marker `#1` (prosodic word), `#2` (prosodic phrase) or `#3`
//! (intonation phrase) attaches to the gap after the preceding character.
//! `#4` marks the end of a sentence and is dropped while parsing. Whitespace
//! carries no meaning in markup text and is ignored everywhere.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Level of the boundary after a character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ProsodyLevel {
    #[default]
    None = 0,
    /// Prosodic word, `#1`.
    Pw = 1,
    /// Prosodic phrase, `#2`.
    Pph = 2,
    /// Intonation phrase, `#3`.
    Iph = 3,
}

impl ProsodyLevel {
    /// The three scored levels, lowest first.
    pub const SCORED: [ProsodyLevel; 3] = [ProsodyLevel::Pw, ProsodyLevel::Pph, ProsodyLevel::Iph];

    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(Self::None),
            1 => Some(Self::Pw),
            2 => Some(Self::Pph),
            3 => Some(Self::Iph),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// Position in [`ProsodyLevel::SCORED`], `None` for the empty boundary.
    pub fn scored_index(self) -> Option<usize> {
        match self {
            Self::None => None,
            level => Some(level as usize - 1),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::None => "-",
            Self::Pw => "PW",
            Self::Pph => "PPH",
            Self::Iph => "IPH",
        }
    }
}

impl From<ProsodyLevel> for u8 {
    fn from(level: ProsodyLevel) -> u8 {
        level.as_u8()
    }
}

impl TryFrom<u8> for ProsodyLevel {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::from_u8(value).ok_or_else(|| format!("prosody level {value} is outside 0..=3"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParsePolicy {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkupError {
    #[error("sentence contains no characters")]
    EmptySentence,
    #[error("malformed marker at byte {offset}: {reason}")]
    MalformedMarker { offset: usize, reason: &'static str },
    #[error("second boundary marker in the same gap at byte {offset}")]
    DuplicateBoundary { offset: usize },
    #[error("{chars} characters but {boundaries} boundaries")]
    LengthMismatch { chars: usize, boundaries: usize },
    #[error("character {0:?} cannot be annotated")]
    InvalidChar(char),
}

/// Something a lenient parse dropped or tolerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkupWarning {
    BareHash { offset: usize },
    UnknownLevel { offset: usize, digit: char },
    LeadingMarker { offset: usize },
    DuplicateMarker { offset: usize },
    TrailingBoundary { offset: usize },
}

/// A character sequence with the boundary level after each character.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSentence")]
pub struct AnnotatedSentence {
    chars: Vec<char>,
    boundaries: Vec<ProsodyLevel>,
}

#[derive(Deserialize)]
struct RawSentence {
    chars: Vec<char>,
    boundaries: Vec<ProsodyLevel>,
}

impl TryFrom<RawSentence> for AnnotatedSentence {
    type Error = MarkupError;

    fn try_from(raw: RawSentence) -> Result<Self, Self::Error> {
        AnnotatedSentence::new(raw.chars, raw.boundaries)
    }
}

fn annotatable(c: char) -> bool {
    c != '#' && !c.is_whitespace()
}

impl AnnotatedSentence {
    pub fn new(chars: Vec<char>, boundaries: Vec<ProsodyLevel>) -> Result<Self, MarkupError> {
        if chars.is_empty() {
            return Err(MarkupError::EmptySentence);
        }
        if chars.len() != boundaries.len() {
            return Err(MarkupError::LengthMismatch {
                chars: chars.len(),
                boundaries: boundaries.len(),
            });
        }
        if let Some(&c) = chars.iter().find(|&&c| !annotatable(c)) {
            return Err(MarkupError::InvalidChar(c));
        }
        Ok(Self { chars, boundaries })
    }

    /// Sentence with no boundaries at all.
    pub fn unmarked(text: &str) -> Result<Self, MarkupError> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        let boundaries = vec![ProsodyLevel::None; chars.len()];
        Self::new(chars, boundaries)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn boundaries(&self) -> &[ProsodyLevel] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn to_tree(&self) -> ProsodicTree {
        ProsodicTree::from_sentence(self)
    }
}

impl fmt::Display for AnnotatedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, level) in self.chars.iter().zip(&self.boundaries) {
            write!(f, "{c}")?;
            if *level != ProsodyLevel::None {
                write!(f, "#{}", level.as_u8())?;
            }
        }
        Ok(())
    }
}

/// Output of [`parse_annotated_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParseReport {
    pub sentence: AnnotatedSentence,
    /// Number of `#4` markers removed.
    pub sentence_end_discards: usize,
    pub warnings: Vec<MarkupWarning>,
}

pub fn parse_annotated(text: &str, policy: ParsePolicy) -> Result<AnnotatedSentence, MarkupError> {
    parse_annotated_report(text, policy).map(|report| report.sentence)
}

pub fn parse_annotated_report(text: &str, policy: ParsePolicy) -> Result<ParseReport, MarkupError> {
    let strict = policy == ParsePolicy::Strict;
    let mut chars = Vec::new();
    let mut boundaries = Vec::new();
    let mut warnings = Vec::new();
    let mut discards = 0;
    // markers already seen in the gap after the last character
    let mut gap_markers = 0usize;
    let mut last_marker_offset = 0usize;

    let mut iter = text.char_indices().peekable();
    while let Some((offset, c)) = iter.next() {
        if c.is_whitespace() {
            continue;
        }
        if c != '#' {
            chars.push(c);
            boundaries.push(ProsodyLevel::None);
            gap_markers = 0;
            continue;
        }

        let digit = match iter.peek() {
            Some(&(_, d)) if d.is_ascii_digit() => {
                iter.next();
                d
            }
            _ => {
                if strict {
                    return Err(MarkupError::MalformedMarker {
                        offset,
                        reason: "'#' is not followed by a digit",
                    });
                }
                warnings.push(MarkupWarning::BareHash { offset });
                continue;
            }
        };

        let level = match digit {
            '1' => Some(ProsodyLevel::Pw),
            '2' => Some(ProsodyLevel::Pph),
            '3' => Some(ProsodyLevel::Iph),
            '4' => None,
            _ => {
                if strict {
                    return Err(MarkupError::MalformedMarker {
                        offset,
                        reason: "unknown boundary level",
                    });
                }
                warnings.push(MarkupWarning::UnknownLevel { offset, digit });
                continue;
            }
        };

        if chars.is_empty() {
            if strict {
                return Err(MarkupError::MalformedMarker {
                    offset,
                    reason: "marker before the first character",
                });
            }
            warnings.push(MarkupWarning::LeadingMarker { offset });
            if level.is_none() {
                discards += 1;
            }
            continue;
        }

        if gap_markers > 0 {
            if strict {
                return Err(MarkupError::DuplicateBoundary { offset });
            }
            warnings.push(MarkupWarning::DuplicateMarker { offset });
            if level.is_none() {
                discards += 1;
            }
            continue;
        }

        gap_markers += 1;
        match level {
            Some(level) => {
                *boundaries.last_mut().expect("at least one character") = level;
                last_marker_offset = offset;
            }
            None => discards += 1,
        }
    }

    if chars.is_empty() {
        return Err(MarkupError::EmptySentence);
    }
    if boundaries.last() != Some(&ProsodyLevel::None) {
        if strict {
            return Err(MarkupError::MalformedMarker {
                offset: last_marker_offset,
                reason: "boundary marker after the final character",
            });
        }
        warnings.push(MarkupWarning::TrailingBoundary { offset: last_marker_offset });
    }

    Ok(ParseReport {
        sentence: AnnotatedSentence { chars, boundaries },
        sentence_end_discards: discards,
        warnings,
    })
}

pub fn render_annotated(sentence: &AnnotatedSentence) -> String {
    sentence.to_string()
}

/// Removes every `#k` marker (and stray `#`) and all whitespace.
pub fn strip_markup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut iter = text.chars().peekable();
    while let Some(c) = iter.next() {
        if c == '#' {
            if iter.peek().is_some_and(|d| d.is_ascii_digit()) {
                iter.next();
            }
        } else if !c.is_whitespace() {
            out.push(c);
        }
    }
    out
}

/// Prosodic word: half-open character range.
pub type WordSpan = Range<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProsodicPhrase {
    pub words: Vec<WordSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntonationPhrase {
    pub phrases: Vec<ProsodicPhrase>,
}

/// Three-layer constituent structure implied by the boundaries.
///
/// A boundary of level ℓ closes every open constituent of level ≤ ℓ, and the
/// sentence end closes all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProsodicTree {
    pub intonation_phrases: Vec<IntonationPhrase>,
    /// Boundary recorded after the final character (only non-`None` for
    /// leniently parsed input).
    pub trailing: ProsodyLevel,
}

impl ProsodicTree {
    pub fn from_sentence(sentence: &AnnotatedSentence) -> Self {
        let n = sentence.len();
        let mut ips = Vec::new();
        let mut phrases = Vec::new();
        let mut words = Vec::new();
        let mut word_start = 0;
        for (i, &level) in sentence.boundaries().iter().enumerate() {
            let level = if i + 1 == n { ProsodyLevel::Iph } else { level };
            if level >= ProsodyLevel::Pw {
                words.push(word_start..i + 1);
                word_start = i + 1;
            }
            if level >= ProsodyLevel::Pph {
                phrases.push(ProsodicPhrase { words: std::mem::take(&mut words) });
            }
            if level >= ProsodyLevel::Iph {
                ips.push(IntonationPhrase { phrases: std::mem::take(&mut phrases) });
            }
        }
        Self {
            intonation_phrases: ips,
            trailing: sentence.boundaries()[n - 1],
        }
    }

    /// Leaf ranges in order.
    pub fn words(&self) -> impl Iterator<Item = &WordSpan> {
        self.intonation_phrases
            .iter()
            .flat_map(|ip| ip.phrases.iter())
            .flat_map(|pp| pp.words.iter())
    }

    pub fn char_count(&self) -> usize {
        self.words().last().map_or(0, |w| w.end)
    }

    /// Reconstructs the per-gap boundary levels.
    pub fn flatten(&self) -> Vec<ProsodyLevel> {
        let mut out = vec![ProsodyLevel::None; self.char_count()];
        for ip in &self.intonation_phrases {
            for (pi, pp) in ip.phrases.iter().enumerate() {
                for (wi, word) in pp.words.iter().enumerate() {
                    let last_word = wi + 1 == pp.words.len();
                    let last_phrase = pi + 1 == ip.phrases.len();
                    out[word.end - 1] = match (last_word, last_phrase) {
                        (false, _) => ProsodyLevel::Pw,
                        (true, false) => ProsodyLevel::Pph,
                        (true, true) => ProsodyLevel::Iph,
                    };
                }
            }
        }
        if let Some(last) = out.last_mut() {
            *last = self.trailing;
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use ProsodyLevel::*;

    fn strict(text: &str) -> Result<AnnotatedSentence, MarkupError> {
        parse_annotated(text, ParsePolicy::Strict)
    }

    #[test]
    fn parses_and_discards_sentence_end() {
        let report = parse_annotated_report("你好#1世界#4", ParsePolicy::Strict).unwrap();
        assert_eq!(report.sentence.chars(), &['你', '好', '世', '界']);
        assert_eq!(report.sentence.boundaries(), &[None, Pw, None, None]);
        assert_eq!(report.sentence_end_discards, 1);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn parses_mixed_levels() {
        let s = strict("AB#2CD#3E").unwrap();
        assert_eq!(s.text(), "ABCDE");
        assert_eq!(s.boundaries(), &[None, Pph, None, Iph, None]);
    }

    #[test]
    fn strict_errors() {
        assert!(matches!(strict("#1AB"), Err(MarkupError::MalformedMarker { offset: 0, .. })));
        assert!(matches!(strict("A#xB"), Err(MarkupError::MalformedMarker { .. })));
        assert!(matches!(strict("A#7B"), Err(MarkupError::MalformedMarker { .. })));
        assert!(matches!(strict("A#1#2B"), Err(MarkupError::DuplicateBoundary { offset: 3 })));
        assert!(matches!(strict("AB#3"), Err(MarkupError::MalformedMarker { .. })));
        assert_eq!(strict("#4"), Err(MarkupError::MalformedMarker { offset: 0, reason: "marker before the first character" }));
        assert_eq!(strict("   "), Err(MarkupError::EmptySentence));
    }

    #[test]
    fn lenient_drops_and_warns() {
        let report = parse_annotated_report("#1A#1#2B#9C#D#3", ParsePolicy::Lenient).unwrap();
        assert_eq!(report.sentence.text(), "ABCD");
        assert_eq!(report.sentence.boundaries(), &[Pw, None, None, Iph]);
        assert_eq!(report.warnings.len(), 5);
        assert!(matches!(report.warnings[0], MarkupWarning::LeadingMarker { .. }));
        assert!(matches!(report.warnings.last(), Some(MarkupWarning::TrailingBoundary { .. })));
        assert_eq!(parse_annotated("#1#4", ParsePolicy::Lenient), Err(MarkupError::EmptySentence));
    }

    #[test]
    fn whitespace_around_markers_is_ignored() {
        let s = strict("你好 #1 世界 #4\n").unwrap();
        assert_eq!(render_annotated(&s), "你好#1世界");
    }

    #[test]
    fn render_examples() {
        let s = AnnotatedSentence::new(vec!['你', '好', '世', '界'], vec![None, Pw, None, None]).unwrap();
        assert_eq!(render_annotated(&s), "你好#1世界");
        let one = AnnotatedSentence::new(vec!['A'], vec![None]).unwrap();
        assert_eq!(render_annotated(&one), "A");
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_markup("你好#1世界#4"), "你好世界");
        assert_eq!(strip_markup("ABC"), "ABC");
        assert_eq!(strip_markup("A#2B#3C"), "ABC");
    }

    #[test]
    fn constructor_validates() {
        assert!(matches!(
            AnnotatedSentence::new(vec!['A'], vec![]),
            Err(MarkupError::LengthMismatch { .. })
        ));
        assert_eq!(AnnotatedSentence::new(vec!['#'], vec![None]), Err(MarkupError::InvalidChar('#')));
        assert_eq!(AnnotatedSentence::new(vec![], vec![]), Err(MarkupError::EmptySentence));
    }

    #[test]
    fn json_shape() {
        let s = strict("你好#1世界").unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"chars":["你","好","世","界"],"boundaries":[0,1,0,0]}"#);
        let back: AnnotatedSentence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<AnnotatedSentence>(r#"{"chars":["A"],"boundaries":[4]}"#).is_err());
    }

    /// Enumerates every way of splitting `0..n` into words, phrases and
    /// intonation phrases and returns the one whose cut levels match.
    fn brute_force_tree(boundaries: &[ProsodyLevel]) -> Vec<Vec<Vec<Range<usize>>>> {
        let n = boundaries.len();
        let gaps = n - 1;
        // each internal gap gets a cut level 0..=3
        for code in 0..4usize.pow(gaps as u32) {
            let mut cuts = Vec::with_capacity(gaps);
            let mut c = code;
            for _ in 0..gaps {
                cuts.push(c % 4);
                c /= 4;
            }
            if cuts.iter().zip(boundaries).any(|(&cut, &b)| cut != b.as_u8() as usize) {
                continue;
            }
            let mut tree = vec![vec![vec![]]];
            let mut start = 0;
            for i in 0..n {
                let cut = if i == gaps { 4 } else { cuts[i] };
                if cut >= 1 {
                    tree.last_mut().unwrap().last_mut().unwrap().push(start..i + 1);
                    start = i + 1;
                }
                if cut >= 3 && i != gaps {
                    tree.push(vec![vec![]]);
                } else if cut == 2 {
                    tree.last_mut().unwrap().push(vec![]);
                }
            }
            return tree;
        }
        unreachable!("boundaries always describe one segmentation")
    }

    fn as_nested(tree: &ProsodicTree) -> Vec<Vec<Vec<Range<usize>>>> {
        tree.intonation_phrases
            .iter()
            .map(|ip| ip.phrases.iter().map(|pp| pp.words.clone()).collect())
            .collect()
    }

    #[test]
    fn tree_example_matches_enumeration() {
        let s = AnnotatedSentence::new("ABCDE".chars().collect(), vec![None, Pw, None, Iph, None]).unwrap();
        let tree = s.to_tree();
        let expected = vec![vec![vec![0..2, 2..4]], vec![vec![4..5]]];
        assert_eq!(brute_force_tree(s.boundaries()), expected);
        assert_eq!(as_nested(&tree), expected);
    }

    #[test]
    fn tree_without_boundaries() {
        let s = AnnotatedSentence::unmarked("ABC").unwrap();
        assert_eq!(as_nested(&s.to_tree()), vec![vec![vec![0..3]]]);
    }

    #[test]
    fn lenient_trailing_boundary_survives_tree() {
        let s = parse_annotated("AB#2", ParsePolicy::Lenient).unwrap();
        assert_eq!(s.to_tree().flatten(), s.boundaries());
    }

    pub(crate) fn arb_sentence(max_len: usize) -> impl Strategy<Value = AnnotatedSentence> {
        proptest::collection::vec((prop::sample::select(vec!['你', '好', '世', '界', 'A', '7', '。']), 0u8..4), 1..=max_len)
            .prop_map(|pairs| {
                let n = pairs.len();
                let chars = pairs.iter().map(|p| p.0).collect();
                let boundaries = pairs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if i + 1 == n { None } else { ProsodyLevel::from_u8(p.1).unwrap() })
                    .collect();
                AnnotatedSentence::new(chars, boundaries).unwrap()
            })
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(s in arb_sentence(30)) {
            let text = render_annotated(&s);
            prop_assert_eq!(strict(&text).unwrap(), s.clone());
            prop_assert_eq!(strip_markup(&text), s.text());
        }

        #[test]
        fn tree_partitions_and_flattens(s in arb_sentence(12)) {
            let tree = s.to_tree();
            let mut next = 0;
            for w in tree.words() {
                prop_assert_eq!(w.start, next);
                prop_assert!(w.end > w.start);
                next = w.end;
            }
            prop_assert_eq!(next, s.len());
            prop_assert_eq!(tree.flatten(), s.boundaries().to_vec());
            prop_assert_eq!(as_nested(&tree), brute_force_tree(s.boundaries()));
        }

        #[test]
        fn lenient_is_total(text in "[#0-9A-C你 ]{0,20}") {
            let has_char = text.chars().any(|c| !c.is_whitespace() && c != '#')
                && !strip_markup(&text).is_empty();
            let parsed = parse_annotated(&text, ParsePolicy::Lenient);
            prop_assert_eq!(parsed.is_ok(), has_char);
        }
    }
}
