//! Performance as a function of a study-wise confidence cutoff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{categorical_metrics, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub retained: usize,
    pub retained_fraction: f64,
    /// `None` when nothing is retained.
    pub accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSweep {
    pub points: Vec<SweepPoint>,
}

/// Evaluates the subset with `confidence >= t` for every threshold.
///
/// `items` pairs each outcome with its confidence; localization failures
/// carry confidence 0 and so leave first.
pub fn confidence_sweep(items: &[(Outcome, f64)], thresholds: &[f64]) -> Result<ConfidenceSweep> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Metric("sweep thresholds must be ascending".into()));
    }
    let total = items.len();
    let points = thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<Outcome> = items.iter().filter(|(_, c)| *c >= t).map(|(o, _)| *o).collect();
            let m = categorical_metrics(&kept);
            SweepPoint {
                threshold: t,
                retained: kept.len(),
                retained_fraction: if total == 0 { 0.0 } else { kept.len() as f64 / total as f64 },
                accuracy: m.accuracy,
                mean_f1: m.mean_f1,
            }
        })
        .collect();
    Ok(ConfidenceSweep { points })
}

/// Confidence cutoff that keeps the largest share of studies not exceeding
/// `target_fraction`. Ties at the cutoff are always kept, so when even the
/// top confidence value is shared by more than the target, that value is
/// returned.
pub fn retention_threshold(confidences: &[f64], target_fraction: f64) -> Result<f64> {
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::Metric(format!("target fraction {target_fraction} outside (0, 1]")));
    }
    if confidences.is_empty() {
        return Err(Error::Metric("no confidences to threshold".into()));
    }
    let mut sorted = confidences.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let budget = (target_fraction * n as f64 + 1e-9).floor() as usize;
    let mut best = sorted[0];
    let mut i = 0;
    while i < n {
        let t = sorted[i];
        while i < n && sorted[i] == t {
            i += 1;
        }
        // i studies have confidence >= t
        if i <= budget {
            best = t;
        } else {
            break;
        }
    }
    Ok(best)
}
