//! Character alignment between a reference text and a model-produced text.

use serde::Serialize;

/// Longest-common-subsequence alignment of two character sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharAlignment {
    /// `(ref_index, pred_index)` pairs, strictly increasing in both components.
    pub pairs: Vec<(usize, usize)>,
    /// `pairs.len() / ref_len`, 0 for an empty reference.
    pub fidelity: f64,
}

impl CharAlignment {
    /// `pred_for_ref[i]` is the predicted index aligned with reference index `i`.
    pub fn ref_to_pred(&self, ref_len: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; ref_len];
        for &(r, p) in &self.pairs {
            map[r] = Some(p);
        }
        map
    }
}

pub fn align_chars(reference: &str, predicted: &str) -> CharAlignment {
    let r: Vec<char> = reference.chars().collect();
    let p: Vec<char> = predicted.chars().collect();
    align_slices(&r, &p)
}

/// LCS over arbitrary symbols.
///
/// Among all maximal common subsequences the lexicographically smallest
/// pair list is returned: the earliest reference index first, then the
/// earliest predicted index.
pub fn align_slices<T: PartialEq>(reference: &[T], predicted: &[T]) -> CharAlignment {
    let (n, m) = (reference.len(), predicted.len());
    let pairs = if n == 0 || m == 0 {
        Vec::new()
    } else {
        // suffix[i][j] = LCS length of reference[i..] and predicted[j..]
        let width = m + 1;
        let mut suffix = vec![0u32; (n + 1) * width];
        for i in (0..n).rev() {
            for j in (0..m).rev() {
                suffix[i * width + j] = if reference[i] == predicted[j] {
                    suffix[(i + 1) * width + j + 1] + 1
                } else {
                    suffix[(i + 1) * width + j].max(suffix[i * width + j + 1])
                };
            }
        }
        let at = |i: usize, j: usize| suffix[i * width + j];

        let mut pairs = Vec::with_capacity(at(0, 0) as usize);
        let (mut i, mut j) = (0, 0);
        while at(i, j) > 0 {
            let remaining = at(i, j);
            // smallest (i', j') that still completes a maximal subsequence
            let next = (i..n).find_map(|ri| {
                if at(ri, j) < remaining {
                    return None;
                }
                (j..m).find(|&pj| reference[ri] == predicted[pj] && at(ri + 1, pj + 1) + 1 == remaining)
                    .map(|pj| (ri, pj))
            });
            let (ri, pj) = next.expect("suffix table guarantees a continuation");
            pairs.push((ri, pj));
            i = ri + 1;
            j = pj + 1;
        }
        pairs
    };
    let fidelity = if n == 0 { 0.0 } else { pairs.len() as f64 / n as f64 };
    CharAlignment { pairs, fidelity }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn drops_one_character() {
        let a = align_chars("你好世界", "你世界");
        assert_eq!(a.pairs, vec![(0, 0), (2, 1), (3, 2)]);
        assert_eq!(a.fidelity, 0.75);
    }

    #[test]
    fn identical_and_disjoint() {
        let a = align_chars("ABCD", "ABCD");
        assert_eq!(a.pairs.len(), 4);
        assert_eq!(a.fidelity, 1.0);
        let b = align_chars("ABC", "XYZ");
        assert!(b.pairs.is_empty());
        assert_eq!(b.fidelity, 0.0);
    }

    #[test]
    fn leftmost_tie_break() {
        // "A" can pair with either predicted A; the first one wins
        assert_eq!(align_chars("A", "AA").pairs, vec![(0, 0)]);
        assert_eq!(align_chars("AA", "A").pairs, vec![(0, 0)]);
        // both "AB" and "BA"-style traces have length 2; lex-smallest is chosen
        let r: Vec<char> = "ABA".chars().collect();
        let p: Vec<char> = "BAB".chars().collect();
        assert_eq!(align_slices(&r, &p).pairs, oracle::brute_force_lcs(&r, &p));
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(align_chars("", "abc").fidelity, 0.0);
        assert!(align_chars("abc", "").pairs.is_empty());
    }

    proptest! {
        #[test]
        fn matches_brute_force(r in proptest::collection::vec(0u8..3, 0..=12), p in proptest::collection::vec(0u8..3, 0..=12)) {
            prop_assert_eq!(align_slices(&r, &p).pairs, oracle::brute_force_lcs(&r, &p));
        }
    }
}
