//! Precision–recall curves by a threshold sweep over the scores.

use serde::{Deserialize, Serialize};

use crate::data::{ModelParams, ObservationSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Rows with score `>= threshold` are predicted positive.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, thresholds descending. The last point
/// classifies every row as positive and so has recall 1.
pub fn precision_recall_scores(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(curve)
}

/// Curve of the linear scores `theta'(1, x)` on `test`.
pub fn precision_recall(theta: &ModelParams, test: &ObservationSet) -> Result<Vec<PrPoint>> {
    theta.check_dim(test.p())?;
    let scores: Vec<f64> = test.rows().map(|x| theta.linear_predictor(x)).collect();
    precision_recall_scores(&scores, test.labels())
}

/// Area under the step-interpolated curve, `sum_k (R_k - R_{k-1}) P_k`.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for pt in curve {
        area += (pt.recall - prev) * pt.precision;
        prev = pt.recall;
    }
    area
}
