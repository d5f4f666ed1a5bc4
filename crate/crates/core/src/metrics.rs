//! Held-out classification metrics.

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::Result;
use crate::model::TrainedModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Positive-class F1; 0 when there are no predicted or actual positives.
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
}

/// Area under the ROC curve via the rank-sum statistic, ties counted half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = crate::stats::ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn binary_metrics(probs: &[f64], labels: &[u8], tau: f64) -> Metrics {
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let yhat = u8::from(p > tau);
        correct += usize::from(yhat == y);
        match (yhat, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let n = labels.len();
    let denom = 2 * tp + fp + fn_;
    Metrics {
        n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        f1: if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 },
        auc: roc_auc(probs, labels),
    }
}

pub fn evaluate(model: &TrainedModel, split: &DatasetSplit) -> Result<Metrics> {
    let probs = split
        .instances()
        .iter()
        .map(|z| model.predict_proba(&z.features))
        .collect::<Result<Vec<_>>>()?;
    Ok(binary_metrics(&probs, &split.labels(), model.hyper.tau))
}
