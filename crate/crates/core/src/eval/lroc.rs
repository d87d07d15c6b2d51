//! Localization ROC for one positive class against the rest.
//!
//! A positive study only counts as a true positive when its score clears the
//! threshold *and* it was correctly localized, so the curve tops out at the
//! fraction of localized positives rather than at 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input row: `score = None` means the study produced no ROI at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrocEntry {
    pub score: Option<f64>,
    pub positive: bool,
    /// Localization rule outcome; only meaningful for positives.
    pub localized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrocPoint {
    pub fpf: f64,
    pub tpf: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrocCurve {
    pub points: Vec<LrocPoint>,
    pub max_sensitivity: f64,
    pub area: f64,
}

/// Sweeps every distinct finite score as a threshold (`score >= t`).
///
/// The curve starts at `(0, 0)` with an infinite threshold and is extended
/// horizontally to `FPF = 1`; the area is the trapezoid rule over `[0, 1]`.
pub fn lroc_curve(entries: &[LrocEntry]) -> Result<LrocCurve> {
    let n_pos = entries.iter().filter(|e| e.positive).count();
    let n_neg = entries.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!("LROC needs positives and negatives (got {n_pos}/{n_neg})")));
    }
    let mut scored: Vec<&LrocEntry> = entries.iter().filter(|e| e.score.is_some()).collect();
    scored.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()));

    let mut points = vec![LrocPoint { fpf: 0.0, tpf: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].score.unwrap();
        while i < scored.len() && scored[i].score.unwrap() == t {
            let e = scored[i];
            if e.positive {
                tp += e.localized as usize;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(LrocPoint { fpf: fp as f64 / n_neg as f64, tpf: tp as f64 / n_pos as f64, threshold: t });
    }
    let max_sensitivity =
        entries.iter().filter(|e| e.positive && e.localized && e.score.is_some()).count() as f64 / n_pos as f64;
    let last = *points.last().unwrap();
    if last.fpf < 1.0 || last.tpf < max_sensitivity {
        points.push(LrocPoint { fpf: 1.0, tpf: max_sensitivity, threshold: f64::NEG_INFINITY });
    }
    let area = points
        .windows(2)
        .map(|w| (w[1].fpf - w[0].fpf) * (w[0].tpf + w[1].tpf) / 2.0)
        .sum();
    Ok(LrocCurve { points, max_sensitivity, area })
}

/// TPF at `FPF = 1 - specificity`, linearly interpolated; on a vertical
/// segment the highest TPF is taken.
pub fn sensitivity_at_specificity(curve: &LrocCurve, specificity: f64) -> Result<f64> {
    if !(specificity > 0.0 && specificity < 1.0) {
        return Err(Error::Metric(format!("specificity {specificity} outside (0, 1)")));
    }
    let target = 1.0 - specificity;
    let pts = &curve.points;
    let exact = pts
        .iter()
        .filter(|p| (p.fpf - target).abs() < 1e-12)
        .map(|p| p.tpf)
        .fold(f64::NEG_INFINITY, f64::max);
    if exact.is_finite() {
        return Ok(exact);
    }
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.fpf < target && target < b.fpf {
            return Ok(a.tpf + (b.tpf - a.tpf) * (target - a.fpf) / (b.fpf - a.fpf));
        }
    }
    Err(Error::Metric("curve does not span the requested FPF".into()))
}
