//! Confusion matrices, accuracy, F1 (binary / macro / micro / weighted) and
//! the Matthews correlation coefficient.
//!
//! Parse failures are kept in a separate per-gold-class column. They count as
//! a prediction of a pseudo-class that is never correct: they lower recall and
//! accuracy for the true class but add to no real class's predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{Label, ParseOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("gold has {gold} items but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {0:?} is not a known class")]
    UnknownClass(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("class list must be non-empty and distinct")]
    InvalidClasses,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    /// `counts[gold][pred]`
    counts: Vec<Vec<u64>>,
    /// Parse failures per gold class.
    failures: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "positive")]
pub enum Averaging {
    /// F1 of the class at this index.
    Binary(usize),
    Macro,
    Micro,
    Weighted,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Result<Self, MetricsError> {
        let mut sorted = classes.clone();
        sorted.sort();
        sorted.dedup();
        if classes.is_empty() || sorted.len() != classes.len() {
            return Err(MetricsError::InvalidClasses);
        }
        let k = classes.len();
        Ok(Self {
            classes,
            counts: vec![vec![0; k]; k],
            failures: vec![0; k],
        })
    }

    /// Builds a matrix directly from counts (`counts[gold][pred]`).
    pub fn from_counts(
        classes: Vec<String>,
        counts: Vec<Vec<u64>>,
        failures: Vec<u64>,
    ) -> Result<Self, MetricsError> {
        let mut cm = Self::new(classes)?;
        let k = cm.classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) || failures.len() != k {
            return Err(MetricsError::InvalidClasses);
        }
        cm.counts = counts;
        cm.failures = failures;
        Ok(cm)
    }

    /// Binary matrix with `classes[0]` as the positive class.
    pub fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self::from_counts(
            vec!["positive".into(), "negative".into()],
            vec![vec![tp, fn_], vec![fp, tn]],
            vec![0, 0],
        )
        .expect("static shape")
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn failures(&self) -> &[u64] {
        &self.failures
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.failures.iter().sum::<u64>()
    }

    pub fn n_failures(&self) -> u64 {
        self.failures.iter().sum()
    }

    fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Items whose gold class is `i`, failures included.
    fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum::<u64>() + self.failures[i]
    }

    fn predicted(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    fn check_nonempty(&self) -> Result<(), MetricsError> {
        if self.total() == 0 {
            Err(MetricsError::EmptyMatrix)
        } else {
            Ok(())
        }
    }

    /// Precision, recall and F1 of class `i`; 0/0 is taken as 0.
    pub fn class_prf(&self, i: usize) -> (f64, f64, f64) {
        let tp = self.counts[i][i] as f64;
        let precision = ratio(tp, self.predicted(i) as f64);
        let recall = ratio(tp, self.support(i) as f64);
        (precision, recall, harmonic(precision, recall))
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Tallies gold labels against parsed predictions over a fixed class set.
pub fn confusion(
    classes: &[String],
    gold: &[Label],
    pred: &[ParseOutcome<Label>],
) -> Result<ConfusionMatrix, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes.to_vec())?;
    for (g, p) in gold.iter().zip(pred) {
        let gi = cm
            .class_index(g.as_str())
            .ok_or_else(|| MetricsError::UnknownClass(g.to_string()))?;
        match p.value() {
            Some(label) => {
                let pi = cm
                    .class_index(label.as_str())
                    .ok_or_else(|| MetricsError::UnknownClass(label.to_string()))?;
                cm.counts[gi][pi] += 1;
            }
            None => cm.failures[gi] += 1,
        }
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.check_nonempty()?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

pub fn f1(cm: &ConfusionMatrix, averaging: Averaging) -> Result<f64, MetricsError> {
    cm.check_nonempty()?;
    let k = cm.classes.len();
    Ok(match averaging {
        Averaging::Binary(pos) => {
            if pos >= k {
                return Err(MetricsError::UnknownClass(format!("#{pos}")));
            }
            cm.class_prf(pos).2
        }
        Averaging::Macro => (0..k).map(|i| cm.class_prf(i).2).sum::<f64>() / k as f64,
        Averaging::Micro => {
            // Failures are predictions of the pseudo-class, so pooled
            // precision and recall share the denominator `total`.
            let p = cm.trace() as f64 / cm.total() as f64;
            harmonic(p, p)
        }
        Averaging::Weighted => {
            let total = cm.total() as f64;
            (0..k)
                .map(|i| cm.support(i) as f64 * cm.class_prf(i).2)
                .sum::<f64>()
                / total
        }
    })
}

/// Covariance form over the matrix extended with the failure column:
/// `(c·s − Σ p_k t_k) / √((s² − Σ p_k²)(s² − Σ t_k²))`, where `c` is the
/// number of correct items, `s` the total, `p_k` the predictions of class k and
/// `t_k` its gold count. On a 2×2 matrix this equals
/// `(TP·TN − FP·FN)/√((TP+FP)(TP+FN)(TN+FP)(TN+FN))`. A zero denominator
/// gives 0.
pub fn mcc(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.check_nonempty()?;
    let k = cm.classes.len();
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let mut predicted: Vec<f64> = (0..k).map(|j| cm.predicted(j) as f64).collect();
    predicted.push(cm.n_failures() as f64);
    let truth: Vec<f64> = (0..k).map(|i| cm.support(i) as f64).collect();
    let pt: f64 = truth.iter().zip(&predicted).map(|(t, p)| t * p).sum();
    let p2: f64 = predicted.iter().map(|p| p * p).sum();
    let t2: f64 = truth.iter().map(|t| t * t).sum();
    let den = ((s * s - p2) * (s * s - t2)).sqrt();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(((c * s - pt) / den).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryF1 {
    pub positive_class: String,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub f1_weighted: f64,
    pub f1_binary: Option<BinaryF1>,
    pub mcc: f64,
    pub n_items: u64,
    pub n_parse_failures: u64,
    pub confusion: ConfusionMatrix,
}

impl ClassificationReport {
    /// `positive_class` selects the binary F1; it defaults to the first class
    /// and is only reported for two-class problems.
    pub fn from_confusion(
        cm: &ConfusionMatrix,
        positive_class: Option<&str>,
    ) -> Result<Self, MetricsError> {
        cm.check_nonempty()?;
        let f1_binary = if cm.classes.len() == 2 {
            let pos = match positive_class {
                Some(name) => cm
                    .class_index(name)
                    .ok_or_else(|| MetricsError::UnknownClass(name.to_string()))?,
                None => 0,
            };
            Some(BinaryF1 {
                positive_class: cm.classes[pos].clone(),
                f1: f1(cm, Averaging::Binary(pos))?,
            })
        } else {
            None
        };
        Ok(Self {
            accuracy: accuracy(cm)?,
            per_class: (0..cm.classes.len())
                .map(|i| {
                    let (precision, recall, f1) = cm.class_prf(i);
                    ClassMetrics {
                        class: cm.classes[i].clone(),
                        precision,
                        recall,
                        f1,
                        support: cm.support(i),
                    }
                })
                .collect(),
            f1_macro: f1(cm, Averaging::Macro)?,
            f1_micro: f1(cm, Averaging::Micro)?,
            f1_weighted: f1(cm, Averaging::Weighted)?,
            f1_binary,
            mcc: mcc(cm)?,
            n_items: cm.total(),
            n_parse_failures: cm.n_failures(),
            confusion: cm.clone(),
        })
    }
}
