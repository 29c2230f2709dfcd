//! Binary classification metrics and Jain's fairness index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub loss: f64,
    pub confusion: Confusion,
}

/// F1 of one class; zero when the class is neither predicted nor present.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn confusion(probs: &[f64], labels: &[u8], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn log_loss(probs: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

/// Area under the ROC curve from the Mann–Whitney U statistic, ties given
/// their average rank.
pub fn auroc(probs: &[f64], labels: &[u8]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AurocUndefined("only one class present"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += midrank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn binary_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<BinaryMetrics> {
    if probs.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: probs.len(),
        });
    }
    let c = confusion(probs, labels, threshold);
    let n = c.total() as f64;
    let f1_pos = f1(c.tp, c.fp, c.fn_);
    let f1_neg = f1(c.tn, c.fn_, c.fp);
    let support_pos = (c.tp + c.fn_) as f64;
    let support_neg = (c.tn + c.fp) as f64;
    Ok(BinaryMetrics {
        accuracy: (c.tp + c.tn) as f64 / n,
        f1_macro: (f1_pos + f1_neg) / 2.0,
        f1_weighted: (f1_pos * support_pos + f1_neg * support_neg) / n,
        auroc: auroc(probs, labels).ok(),
        loss: log_loss(probs, labels),
        confusion: c,
    })
}

/// `(sum x)^2 / (n * sum x^2)`.
pub fn jain_fairness(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("fairness values"));
    }
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "values",
            reason: "must be finite and nonnegative".into(),
        });
    }
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        return Err(Error::InvalidArgument {
            name: "values",
            reason: "all values are zero".into(),
        });
    }
    Ok((sum * sum / (values.len() as f64 * sum_sq)).min(1.0))
}

/// Test-set summary of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub auroc: Option<f64>,
}

impl From<&BinaryMetrics> for TestMetrics {
    fn from(m: &BinaryMetrics) -> Self {
        Self {
            loss: m.loss,
            accuracy: m.accuracy,
            f1_macro: m.f1_macro,
            f1_weighted: m.f1_weighted,
            auroc: m.auroc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Everything measured at the end of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub per_edge: BTreeMap<usize, EdgeMetrics>,
    pub global_val: ValMetrics,
    pub global_test: TestMetrics,
    /// Jain's index over the per-edge test accuracies.
    pub jfi: f64,
}
