//! Ranking and classification metrics: ROC AUC via rank statistics,
//! per-class precision/recall/F1, accuracy, and the confusion matrix.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when only one class is present in the labels.
    pub auc: Option<f64>,
    pub precision_1: f64,
    pub recall_1: f64,
    pub f1_1: f64,
    pub precision_0: f64,
    pub recall_0: f64,
    pub f1_0: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub n: usize,
    pub threshold: f64,
}

fn validate_pair(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Experiment(format!("score at index {bad} is not finite")));
    }
    if let Some(bad) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Experiment(format!(
            "labels must be 0 or 1, found {} at index {bad}",
            labels[bad]
        )));
    }
    Ok(())
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from positive midranks in
/// O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    validate_pair(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // midranks: each tie group gets the mean of the ranks it spans
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j average to (i + j + 1) / 2
        let midrank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }

    let n_pos_f = n_pos as f64;
    let auc = (rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64);
    Ok(auc)
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    safe_div(2.0 * precision * recall, precision + recall)
}

/// Threshold the scores at `threshold` (predict 1 iff score >= threshold)
/// and compute the full classification report. AUC is `None` when the
/// labels are single-class.
pub fn report(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    validate_pair(scores, labels)?;
    let mut c = Confusion {
        tn: 0,
        fp: 0,
        fn_: 0,
        tp: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = u8::from(s >= threshold);
        match (l, pred) {
            (0, 0) => c.tn += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            (1, 1) => c.tp += 1,
            _ => unreachable!(),
        }
    }
    let auc = match roc_auc(scores, labels) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    let (tn, fp, fn_, tp) = (c.tn as f64, c.fp as f64, c.fn_ as f64, c.tp as f64);
    let precision_1 = safe_div(tp, tp + fp);
    let recall_1 = safe_div(tp, tp + fn_);
    let precision_0 = safe_div(tn, tn + fn_);
    let recall_0 = safe_div(tn, tn + fp);
    Ok(MetricsReport {
        auc,
        precision_1,
        recall_1,
        f1_1: f1(precision_1, recall_1),
        precision_0,
        recall_0,
        f1_0: f1(precision_0, recall_0),
        accuracy: (tp + tn) / labels.len() as f64,
        confusion: c,
        n: labels.len(),
        threshold,
    })
}
