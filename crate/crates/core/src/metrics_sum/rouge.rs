use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Identifies the tokenizer in reports; bump when its rules change.
pub const TOKENIZER_VERSION: &str = "alnum-lowercase-v1";

/// Lowercased maximal runs of alphanumeric characters.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    R1,
    R2,
    RL,
    /// Higher-order n-grams.
    N(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub variant: RougeVariant,
}

impl RougeScore {
    pub fn from_pr(precision: f64, recall: f64, variant: RougeVariant) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            variant,
        }
    }

    pub fn zero(variant: RougeVariant) -> Self {
        Self::from_pr(0.0, 0.0, variant)
    }
}

fn div(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap. `n` of 0 is treated as 1.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore {
    let n = n.max(1);
    let variant = match n {
        1 => RougeVariant::R1,
        2 => RougeVariant::R2,
        n => RougeVariant::N(n),
    };
    let cand = ngram_counts(&candidate.0, n);
    let refs = ngram_counts(&reference.0, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    RougeScore::from_pr(div(overlap, cand_total), div(overlap, ref_total), variant)
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let l = lcs_len(&candidate.0, &reference.0);
    RougeScore::from_pr(div(l, candidate.len()), div(l, reference.len()), RougeVariant::RL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(ts: &[&str]) -> TokenSeq {
        ts.iter().copied().collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("The cat sat."), seq(&["the", "cat", "sat"]));
        assert_eq!(tokenize("Q3-2023 EPS $1.50"), seq(&["q3", "2023", "eps", "1", "50"]));
        assert_eq!(tokenize(""), TokenSeq::default());
    }

    #[test]
    fn rouge_n_cases() {
        let a = seq(&["the", "cat", "sat"]);
        let r = rouge_n(&a, &a, 1);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = rouge_n(&seq(&["the", "cat"]), &a, 1);
        assert!((r.precision - 1.0).abs() < 1e-9);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-9);
        assert!((r.f1 - 0.8).abs() < 1e-9);
        let r = rouge_n(&seq(&["x", "y"]), &a, 1);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        // clipping: repeated candidate unigram counts once per reference copy
        let r = rouge_n(&seq(&["the", "the", "the"]), &seq(&["the", "cat"]), 1);
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-12);
        let r = rouge_n(&seq(&["the", "cat", "sat"]), &seq(&["the", "cat", "ran"]), 2);
        assert!((r.f1 - 0.5).abs() < 1e-12);
        assert_eq!(rouge_n(&seq(&["a"]), &seq(&["a"]), 2).f1, 0.0);
    }

    #[test]
    fn rouge_l_cases() {
        let r = rouge_l(&seq(&["a", "b", "c", "d"]), &seq(&["a", "c", "b", "d"]));
        assert!((r.precision - 0.75).abs() < 1e-9);
        assert!((r.recall - 0.75).abs() < 1e-9);
        assert!((r.f1 - 0.75).abs() < 1e-9);
        let a = seq(&["x", "y"]);
        assert_eq!(rouge_l(&a, &a).f1, 1.0);
        assert_eq!(rouge_l(&seq(&["x"]), &seq(&["a", "b"])).f1, 0.0);
        assert_eq!(rouge_l(&TokenSeq::default(), &a).f1, 0.0);
    }

    fn tokens() -> impl Strategy<Value = TokenSeq> {
        proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..12)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn precision_recall_symmetry(a in tokens(), b in tokens(), n in 1usize..4) {
            prop_assert_eq!(rouge_n(&a, &b, n).precision, rouge_n(&b, &a, n).recall);
            prop_assert_eq!(rouge_l(&a, &b).precision, rouge_l(&b, &a).recall);
        }

        #[test]
        fn appending_reference_token_never_lowers_recall(a in tokens(), b in tokens(), pick in any::<prop::sample::Index>()) {
            prop_assume!(!b.is_empty());
            let extra = b.tokens()[pick.index(b.len())].clone();
            let mut longer = a.tokens().to_vec();
            longer.push(extra);
            let longer: TokenSeq = longer.into_iter().collect();
            prop_assert!(rouge_n(&longer, &b, 1).recall >= rouge_n(&a, &b, 1).recall);
        }

        #[test]
        fn rouge_l_below_rouge_1(a in tokens(), b in tokens()) {
            prop_assert!(rouge_l(&a, &b).f1 <= rouge_n(&a, &b, 1).f1 + 1e-12);
        }
    }
}
