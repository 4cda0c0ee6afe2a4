use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::rag::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Trim, collapse whitespace, case-fold, compare numbers numerically.
    #[default]
    Canonical,
    /// Byte equality.
    Strict,
}

const NUMERIC_REL_TOL: f64 = 1e-9;

pub fn canonicalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn as_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|f| f.is_finite())
}

pub fn exact_match(expected: &str, actual: &str) -> bool {
    exact_match_with(expected, actual, MatchMode::Canonical)
}

pub fn exact_match_with(expected: &str, actual: &str, mode: MatchMode) -> bool {
    if mode == MatchMode::Strict {
        return expected == actual;
    }
    let (e, a) = (canonicalize(expected), canonicalize(actual));
    if let (Some(x), Some(y)) = (as_number(&e), as_number(&a)) {
        return x == y || (x - y).abs() <= NUMERIC_REL_TOL * x.abs().max(y.abs());
    }
    e == a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(matches: usize, candidate_total: usize, reference_total: usize) -> Self {
        if matches == 0 || candidate_total == 0 || reference_total == 0 {
            return Self::default();
        }
        let precision = matches as f64 / candidate_total as f64;
        let recall = matches as f64 / reference_total as f64;
        Self {
            precision,
            recall,
            f1: 2.0 * precision * recall / (precision + recall),
        }
    }
}

fn lower_tokens(s: &str) -> Vec<String> {
    tokenize(s).into_iter().map(|t| t.to_lowercase()).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    assert!(n >= 1, "ROUGE order must be at least 1");
    let (c, r) = (lower_tokens(candidate), lower_tokens(reference));
    let (cc, rc) = (ngram_counts(&c, n), ngram_counts(&r, n));
    let matches = cc.iter().map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(matches, cc.values().sum(), rc.values().sum())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common token subsequence.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let (c, r) = (lower_tokens(candidate), lower_tokens(reference));
    RougeScore::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_rules() {
        assert!(exact_match("42", "42.0"));
        assert!(exact_match("Aspirin ", "aspirin"));
        assert!(exact_match("a  b\nc", "A B C"));
        assert!(!exact_match("3", "4"));
        assert!(exact_match("0.1", "0.1000000000001"));
        assert!(exact_match("nan", "NaN "));
        assert!(!exact_match_with("42", "42.0", MatchMode::Strict));
    }

    #[test]
    fn rouge_examples() {
        let s = rouge_n("the cat", "the cat sat", 1);
        assert_eq!((s.precision, s.recall), (1.0, 2.0 / 3.0));
        assert!((s.f1 - 0.8).abs() < 1e-12);
        let l = rouge_l("a b c d", "a c b d");
        assert_eq!((l.precision, l.recall, l.f1), (0.75, 0.75, 0.75));
        assert_eq!(rouge_n("", "x", 1), RougeScore::default());
        assert_eq!(rouge_l("x", ""), RougeScore::default());
        assert_eq!(rouge_n("a", "a", 2), RougeScore::default());
    }
}
