use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rouge::TokenSeq;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BertScoreError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding matrix has no rows")]
    EmptyMatrix,
    #[error("row {row} has norm {norm}, expected unit norm")]
    NotNormalized { row: usize, norm: f64 },
    #[error("cannot normalize a zero vector (row {0})")]
    ZeroVector(usize),
    #[error("{expected} weights expected, got {got}")]
    WeightCount { expected: usize, got: usize },
}

/// One vector per token, all of the same dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingMatrix {
    rows: Vec<Vec<f64>>,
    dim: usize,
    unit_normalized: bool,
}

impl EmbeddingMatrix {
    /// Rows taken as given.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, BertScoreError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(BertScoreError::DimensionMismatch(dim, bad.len()));
        }
        let unit_normalized = !rows.is_empty()
            && rows.iter().all(|r| (norm(r) - 1.0).abs() <= NORM_TOLERANCE);
        Ok(Self {
            rows,
            dim,
            unit_normalized,
        })
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalized(rows: Vec<Vec<f64>>) -> Result<Self, BertScoreError> {
        let mut m = Self::new(rows)?;
        for (i, r) in m.rows.iter_mut().enumerate() {
            let n = norm(r);
            if n == 0.0 || !n.is_finite() {
                return Err(BertScoreError::ZeroVector(i));
            }
            r.iter_mut().for_each(|x| *x /= n);
        }
        m.unit_normalized = !m.rows.is_empty();
        Ok(m)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    fn check(&self) -> Result<(), BertScoreError> {
        if self.rows.is_empty() {
            return Err(BertScoreError::EmptyMatrix);
        }
        for (row, r) in self.rows.iter().enumerate() {
            let n = norm(r);
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(BertScoreError::NotNormalized { row, norm: n });
            }
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BertScore {
    pub const ZERO: BertScore = BertScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    /// `(s − b) / (1 − b)` applied to precision, recall and F1.
    pub fn rescaled(&self, baseline: f64) -> Self {
        let r = |s: f64| (s - baseline) / (1.0 - baseline);
        Self {
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
        }
    }
}

/// Greedy matching with uniform token weights.
pub fn bert_score(
    cand: &EmbeddingMatrix,
    reference: &EmbeddingMatrix,
) -> Result<BertScore, BertScoreError> {
    bert_score_weighted(cand, reference, None, None)
}

/// Greedy matching on the cosine-similarity matrix. Recall averages, over
/// reference rows, the best similarity to any candidate row; precision does
/// the same with roles swapped. Similarities are clamped to `[0, 1]`.
/// Optional weights (e.g. IDF) replace the uniform average.
pub fn bert_score_weighted(
    cand: &EmbeddingMatrix,
    reference: &EmbeddingMatrix,
    cand_weights: Option<&[f64]>,
    ref_weights: Option<&[f64]>,
) -> Result<BertScore, BertScoreError> {
    cand.check()?;
    reference.check()?;
    if cand.dim != reference.dim {
        return Err(BertScoreError::DimensionMismatch(cand.dim, reference.dim));
    }
    let sim: Vec<Vec<f64>> = cand
        .rows
        .iter()
        .map(|c| {
            reference
                .rows
                .iter()
                .map(|r| dot(c, r).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let best_for_cand: Vec<f64> = sim
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .collect();
    let best_for_ref: Vec<f64> = (0..reference.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(0.0, f64::max))
        .collect();
    let precision = weighted_mean(&best_for_cand, cand_weights)?;
    let recall = weighted_mean(&best_for_ref, ref_weights)?;
    Ok(BertScore::from_pr(precision, recall))
}

fn weighted_mean(values: &[f64], weights: Option<&[f64]>) -> Result<f64, BertScoreError> {
    match weights {
        None => Ok(values.iter().sum::<f64>() / values.len() as f64),
        Some(w) => {
            if w.len() != values.len() {
                return Err(BertScoreError::WeightCount {
                    expected: values.len(),
                    got: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                return Ok(0.0);
            }
            Ok(values.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / total)
        }
    }
}

/// Inverse document frequency over a reference corpus:
/// `ln((M + 1) / (df + 1))` for M documents.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: HashMap<String, f64>,
    unseen: f64,
}

impl IdfTable {
    pub fn from_references<'a>(refs: impl IntoIterator<Item = &'a TokenSeq>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut m = 0usize;
        for r in refs {
            m += 1;
            let uniq: HashSet<&String> = r.tokens().iter().collect();
            for t in uniq {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let idf = |d: usize| ((m as f64 + 1.0) / (d as f64 + 1.0)).ln();
        Self {
            weights: df.into_iter().map(|(t, d)| (t, idf(d))).collect(),
            unseen: idf(0),
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(self.unseen)
    }

    pub fn weights_for(&self, tokens: &TokenSeq) -> Vec<f64> {
        tokens.tokens().iter().map(|t| self.weight(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identical_sets_score_one() {
        let m = EmbeddingMatrix::normalized(vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let s = bert_score(&m, &m).unwrap();
        assert!((s.precision - 1.0).abs() < 1e-9);
        assert!((s.recall - 1.0).abs() < 1e-9);
        assert!((s.f1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_sets_score_zero() {
        let a = EmbeddingMatrix::new(vec![e(0, 4), e(1, 4)]).unwrap();
        let b = EmbeddingMatrix::new(vec![e(2, 4), e(3, 4)]).unwrap();
        assert_eq!(bert_score(&a, &b).unwrap(), BertScore::ZERO);
    }

    #[test]
    fn partial_cover() {
        let reference = EmbeddingMatrix::new(vec![e(0, 3), e(1, 3)]).unwrap();
        let cand = EmbeddingMatrix::new(vec![e(0, 3)]).unwrap();
        let s = bert_score(&cand, &reference).unwrap();
        // similarity matrix [[1, 0]]: R = (1 + 0)/2, P = 1
        assert!((s.recall - 0.5).abs() < 1e-9);
        assert!((s.precision - 1.0).abs() < 1e-9);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn negative_cosines_clamped() {
        let a = EmbeddingMatrix::new(vec![vec![1.0, 0.0]]).unwrap();
        let b = EmbeddingMatrix::new(vec![vec![-1.0, 0.0]]).unwrap();
        assert_eq!(bert_score(&a, &b).unwrap(), BertScore::ZERO);
    }

    #[test]
    fn errors() {
        let a = EmbeddingMatrix::new(vec![e(0, 2)]).unwrap();
        let b = EmbeddingMatrix::new(vec![e(0, 3)]).unwrap();
        assert_eq!(bert_score(&a, &b), Err(BertScoreError::DimensionMismatch(2, 3)));
        let empty = EmbeddingMatrix::new(vec![]).unwrap();
        assert_eq!(bert_score(&a, &empty), Err(BertScoreError::EmptyMatrix));
        let raw = EmbeddingMatrix::new(vec![vec![3.0, 4.0]]).unwrap();
        assert!(!raw.unit_normalized());
        assert!(matches!(bert_score(&raw, &raw), Err(BertScoreError::NotNormalized { .. })));
        assert!(EmbeddingMatrix::new(vec![vec![1.0], vec![1.0, 0.0]]).is_err());
        assert_eq!(
            EmbeddingMatrix::normalized(vec![vec![0.0, 0.0]]),
            Err(BertScoreError::ZeroVector(0))
        );
    }

    #[test]
    fn idf_weighting() {
        let refs: Vec<TokenSeq> = vec![
            ["the", "rise"].into_iter().collect(),
            ["the", "fall"].into_iter().collect(),
        ];
        let idf = IdfTable::from_references(&refs);
        assert_eq!(idf.weight("the"), 0.0);
        assert!((idf.weight("rise") - (1.5f64).ln()).abs() < 1e-12);
        assert!((idf.weight("unknown") - 3f64.ln()).abs() < 1e-12);

        // reference [the, rise], candidate [the]: uniform R = 0.5, IDF R = 0
        let reference = EmbeddingMatrix::new(vec![e(0, 2), e(1, 2)]).unwrap();
        let cand = EmbeddingMatrix::new(vec![e(0, 2)]).unwrap();
        let w = idf.weights_for(&refs[0]);
        let s = bert_score_weighted(&cand, &reference, None, Some(&w)).unwrap();
        assert_eq!(s.recall, 0.0);
    }

    #[test]
    fn baseline_rescaling() {
        let s = BertScore::from_pr(0.9, 0.6).rescaled(0.5);
        assert!((s.precision - 0.8).abs() < 1e-12);
        assert!((s.recall - 0.2).abs() < 1e-12);
    }
}
