//! Edit distance kernels and the normalized edit distance (NED).
//!
//! All distances count Unicode scalar values, not bytes. Strings are compared
//! after [`fold`]: lowercase, trimmed, internal whitespace collapsed to one
//! space.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

/// Case and whitespace folding applied before every comparison.
pub fn fold(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Folded form as a char vector, the representation the index works on.
pub fn fold_chars(s: &str) -> Vec<char> {
    fold(s).chars().collect()
}

/// Levenshtein distance over chars (unit-cost insert, delete, substitute).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(lc != sc);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[short.len()]
}

/// Levenshtein distance if it is at most `max`, otherwise `None`.
///
/// Rows whose minimum already exceeds `max` end the computation early.
pub fn levenshtein_bounded(a: &[char], b: &[char], max: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > max {
        return None;
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return (long.len() <= max).then_some(long.len());
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        let mut row_min = row[0];
        for (j, &sc) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(lc != sc);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            row_min = row_min.min(row[j + 1]);
            diag = above;
        }
        if row_min > max {
            return None;
        }
    }
    let d = row[short.len()];
    (d <= max).then_some(d)
}

/// A normalized edit distance kept as an exact ratio `distance / length`.
///
/// Ordering and equality compare the ratios exactly, so `1/2 == 2/4`.
#[derive(Debug, Clone, Copy)]
pub struct Ned {
    distance: u32,
    length: u32,
}

impl Ned {
    pub const ZERO: Ned = Ned {
        distance: 0,
        length: 0,
    };

    /// Builds the ratio for a kernel distance between strings of the given
    /// char lengths.
    pub fn from_parts(distance: usize, len_a: usize, len_b: usize) -> Self {
        let length = len_a.max(len_b);
        debug_assert!(distance <= length);
        Ned {
            distance: distance as u32,
            length: length as u32,
        }
    }

    pub fn distance(&self) -> usize {
        self.distance as usize
    }

    pub fn length(&self) -> usize {
        self.length as usize
    }

    pub fn value(&self) -> f64 {
        if self.length == 0 {
            0.0
        } else {
            f64::from(self.distance) / f64::from(self.length)
        }
    }

    /// Largest kernel distance a pair normalized by `length` may have while
    /// still scoring no worse than `self`.
    pub fn max_distance_within(&self, length: usize) -> usize {
        if self.length == 0 {
            return 0;
        }
        (u64::from(self.distance) * length as u64 / u64::from(self.length)) as usize
    }

    fn cross(&self, other: &Ned) -> (u64, u64) {
        // 0/0 behaves as 0/1.
        let (ld, ll) = (u64::from(self.distance), u64::from(self.length.max(1)));
        let (rd, rl) = (u64::from(other.distance), u64::from(other.length.max(1)));
        (ld * rl, rd * ll)
    }
}

impl PartialEq for Ned {
    fn eq(&self, other: &Self) -> bool {
        let (l, r) = self.cross(other);
        l == r
    }
}

impl Eq for Ned {}

impl PartialOrd for Ned {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ned {
    fn cmp(&self, other: &Self) -> Ordering {
        let (l, r) = self.cross(other);
        l.cmp(&r)
    }
}

impl fmt::Display for Ned {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.value())
    }
}

/// Normalized edit distance of two raw strings, as a ratio.
pub fn ned_ratio(a: &str, b: &str) -> Ned {
    let a = fold_chars(a);
    let b = fold_chars(b);
    Ned::from_parts(levenshtein_chars(&a, &b), a.len(), b.len())
}

/// Normalized edit distance in `[0, 1]`; two empty strings score 0.
pub fn ned(a: &str, b: &str) -> f64 {
    ned_ratio(a, b).value()
}

/// Precomputed query for repeated distance computations against many texts.
///
/// Patterns of up to 64 chars use the bit-parallel algorithm of Myers in the
/// formulation by Hyyrö; longer ones fall back to the bounded row DP.
#[derive(Debug, Clone)]
pub struct PatternMatcher {
    chars: Vec<char>,
    ascii: [u64; 128],
    other: HashMap<char, u64>,
}

impl PatternMatcher {
    pub fn new(chars: Vec<char>) -> Self {
        let mut ascii = [0u64; 128];
        let mut other = HashMap::new();
        if chars.len() <= 64 {
            for (i, &c) in chars.iter().enumerate() {
                let bit = 1u64 << i;
                if (c as u32) < 128 {
                    ascii[c as usize] |= bit;
                } else {
                    *other.entry(c).or_insert(0) |= bit;
                }
            }
        }
        PatternMatcher {
            chars,
            ascii,
            other,
        }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    #[inline]
    fn peq(&self, c: char) -> u64 {
        if (c as u32) < 128 {
            self.ascii[c as usize]
        } else {
            self.other.get(&c).copied().unwrap_or(0)
        }
    }

    /// Exact distance to `text` if it is at most `max`.
    pub fn distance_within(&self, text: &[char], max: usize) -> Option<usize> {
        let m = self.chars.len();
        if m.abs_diff(text.len()) > max {
            return None;
        }
        if m == 0 || m > 64 {
            return levenshtein_bounded(&self.chars, text, max);
        }
        let d = self.bit_parallel(text);
        (d <= max).then_some(d)
    }

    /// Exact distance to `text`.
    pub fn distance(&self, text: &[char]) -> usize {
        let m = self.chars.len();
        if m == 0 {
            return text.len();
        }
        if m > 64 {
            return levenshtein_chars(&self.chars, text);
        }
        self.bit_parallel(text)
    }

    fn bit_parallel(&self, text: &[char]) -> usize {
        let m = self.chars.len();
        let last = 1u64 << (m - 1);
        let mut pv = u64::MAX;
        let mut mv = 0u64;
        let mut score = m;
        for &c in text {
            let eq = self.peq(c);
            let xv = eq | mv;
            let xh = ((eq & pv).wrapping_add(pv) ^ pv) | eq;
            let mut ph = mv | !(xh | pv);
            let mut mh = pv & xh;
            if ph & last != 0 {
                score += 1;
            } else if mh & last != 0 {
                score -= 1;
            }
            ph = (ph << 1) | 1;
            mh <<= 1;
            pv = mh | !(xv | ph);
            mv = ph & xv;
        }
        score
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn known_distances() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
    }

    #[test]
    fn ned_examples() {
        assert_eq!(ned("RBS", "rbs"), 0.0);
        assert_eq!(ned("", "x"), 1.0);
        assert_eq!(ned("", ""), 0.0);
        // Kernel is 7: insert the apostrophe, then " pizza".
        assert_eq!(ned("dominos", "domino's pizza"), 7.0 / 14.0);
    }

    #[test]
    fn fold_collapses_whitespace_and_case() {
        assert_eq!(fold("  Domino's \t PIZZA\n"), "domino's pizza");
        assert_eq!(fold(""), "");
        assert_eq!(fold("   "), "");
    }

    #[test]
    fn ned_ratio_ordering_is_exact() {
        let half = Ned::from_parts(1, 2, 1);
        let also_half = Ned::from_parts(2, 4, 3);
        assert_eq!(half, also_half);
        assert!(Ned::from_parts(1, 3, 3) < half);
        assert_eq!(Ned::ZERO, Ned::from_parts(0, 5, 5));
        assert_eq!(half.max_distance_within(9), 4);
    }

    #[test]
    fn bit_parallel_handles_64_char_patterns() {
        let p: String = "ab".repeat(32);
        let t: String = "ba".repeat(33);
        let m = PatternMatcher::new(chars(&p));
        assert_eq!(m.distance(&chars(&t)), levenshtein(&p, &t));
        let long: String = "xyz".repeat(30);
        let m = PatternMatcher::new(chars(&long));
        assert_eq!(m.distance(&chars(&t)), levenshtein(&long, &t));
    }

    #[test]
    fn unicode_counts_scalars() {
        assert_eq!(levenshtein("café", "cafe"), 1);
        let m = PatternMatcher::new(chars("naïve"));
        assert_eq!(m.distance(&chars("naive")), 1);
    }

    proptest! {
        #[test]
        fn symmetric_and_identity(a in "[a-dé ]{0,20}", b in "[a-dé ]{0,20}") {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &a), 0);
        }

        #[test]
        fn triangle_inequality(a in "[a-c]{0,12}", b in "[a-c]{0,12}", c in "[a-c]{0,12}") {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn ned_in_unit_interval(a in "\\PC{0,20}", b in "\\PC{0,20}") {
            let v = ned(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 0.0, fold(&a) == fold(&b));
        }

        #[test]
        fn matcher_agrees_with_row_dp(a in "[a-eö]{0,80}", b in "[a-eö]{0,80}", max in 0usize..40) {
            let (ac, bc) = (chars(&a), chars(&b));
            let m = PatternMatcher::new(ac.clone());
            let exact = levenshtein_chars(&ac, &bc);
            prop_assert_eq!(m.distance(&bc), exact);
            let expect = (exact <= max).then_some(exact);
            prop_assert_eq!(m.distance_within(&bc, max), expect);
            prop_assert_eq!(levenshtein_bounded(&ac, &bc, max), expect);
        }
    }
}
