//! Pinyin comparison form: lowercase ASCII, `ü` as `v`, trailing tone digit
//! 1–5 with the neutral tone always written `5`.

/// Maps a tone-marked vowel to its base vowel and tone number.
fn split_tone_mark(c: char) -> Option<(char, u8)> {
    const TABLE: [(char, char, u8); 28] = [
        ('ā', 'a', 1), ('á', 'a', 2), ('ǎ', 'a', 3), ('à', 'a', 4),
        ('ē', 'e', 1), ('é', 'e', 2), ('ě', 'e', 3), ('è', 'e', 4),
        ('ī', 'i', 1), ('í', 'i', 2), ('ǐ', 'i', 3), ('ì', 'i', 4),
        ('ō', 'o', 1), ('ó', 'o', 2), ('ǒ', 'o', 3), ('ò', 'o', 4),
        ('ū', 'u', 1), ('ú', 'u', 2), ('ǔ', 'u', 3), ('ù', 'u', 4),
        ('ǖ', 'v', 1), ('ǘ', 'v', 2), ('ǚ', 'v', 3), ('ǜ', 'v', 4),
        ('ń', 'n', 2), ('ň', 'n', 3), ('ǹ', 'n', 4), ('ḿ', 'm', 2),
    ];
    TABLE.iter().find(|(marked, _, _)| *marked == c).map(|&(_, base, tone)| (base, tone))
}

/// Normalizes one syllable, e.g. `"Hǎo"` → `"hao3"`, `"ma0"` → `"ma5"`,
/// `"lü4"` → `"lv4"`, `"de"` → `"de5"`.
pub fn normalize_syllable(syllable: &str) -> String {
    let mut body = String::with_capacity(syllable.len() + 1);
    let mut mark_tone = None;
    let mut digit_tone = None;
    for c in syllable.trim().chars() {
        let lower = c.to_lowercase().next().unwrap_or(c);
        if let Some((base, tone)) = split_tone_mark(lower) {
            body.push(base);
            mark_tone = Some(tone);
        } else if let Some(d) = lower.to_digit(10) {
            digit_tone = Some(d as u8);
        } else if lower == 'ü' || lower == 'v' {
            body.push('v');
        } else if lower == ':' {
            // "u:" spelling of ü
            if body.ends_with('u') {
                body.pop();
                body.push('v');
            }
        } else {
            body.push(lower);
        }
    }
    let tone = match digit_tone.or(mark_tone) {
        Some(0) | None => 5,
        Some(t) => t,
    };
    body.push(char::from(b'0' + tone));
    body
}

pub fn same_syllable(a: &str, b: &str) -> bool {
    normalize_syllable(a) == normalize_syllable(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digit_forms() {
        assert_eq!(normalize_syllable("hao3"), "hao3");
        assert_eq!(normalize_syllable("HAO3"), "hao3");
        assert_eq!(normalize_syllable("ma0"), "ma5");
        assert_eq!(normalize_syllable("ma5"), "ma5");
        assert_eq!(normalize_syllable("de"), "de5");
        assert_eq!(normalize_syllable(" lv4 "), "lv4");
        assert_eq!(normalize_syllable("lu:4"), "lv4");
    }

    #[test]
    fn tone_marks() {
        assert_eq!(normalize_syllable("hǎo"), "hao3");
        assert_eq!(normalize_syllable("Lǜ"), "lv4");
        assert_eq!(normalize_syllable("nǚ"), "nv3");
        assert_eq!(normalize_syllable("lüe"), "lve5");
        assert!(same_syllable("shì", "shi4"));
        assert!(!same_syllable("shi3", "shi4"));
    }
}
