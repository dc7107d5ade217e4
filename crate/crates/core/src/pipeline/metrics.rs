use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Confusion counts and the scores derived from them. Ratios with a zero
/// denominator are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            // 2PR/(P+R) rewritten over counts, exact for small integers.
            f1: ratio(2.0 * tp as f64, (2 * tp + fp + fn_) as f64),
            accuracy: ratio((tp + tn) as f64, (tp + fp + fn_ + tn) as f64),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Scores predictions against labels; `p >= threshold` counts as wandering.
pub fn compute_metrics(predictions: &[f64], labels: &[bool], threshold: f64) -> Result<Metrics, PipelineError> {
    if predictions.len() != labels.len() {
        return Err(PipelineError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn))
}
