//! Monte Carlo dropout inference and study-level aggregation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classify::mlp::MlpModel;
use crate::model::LesionClass;
use crate::rng::stage_rng;

/// Summary of the MC passes for one ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPrediction {
    pub probs: [f64; 3],
    /// Population variance of each class probability over the passes.
    pub per_class_variance: [f64; 3],
}

impl RoiPrediction {
    /// Total dispersion of the probability vector: sum of per-class variances.
    pub fn uncertainty(&self) -> f64 {
        self.per_class_variance.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPrediction {
    pub probs: [f64; 3],
    pub uncertainty: f64,
    pub confidence: f64,
    /// `None` when localization failed.
    pub predicted: Option<LesionClass>,
    pub localized: bool,
}

impl StudyPrediction {
    pub fn not_localized() -> Self {
        StudyPrediction {
            probs: [0.0; 3],
            uncertainty: 0.0,
            confidence: 0.0,
            predicted: None,
            localized: false,
        }
    }
}

/// Index of the largest entry; ties resolve to the lower index.
pub fn argmax(p: &[f64; 3]) -> LesionClass {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    LesionClass::from_index(best).expect("three classes")
}

/// Mean and population variance of per-pass probability vectors.
pub fn summarize_passes(samples: &[[f64; 3]]) -> RoiPrediction {
    let n = samples.len() as f64;
    let mut probs = [0.0; 3];
    for s in samples {
        for k in 0..3 {
            probs[k] += s[k];
        }
    }
    probs.iter_mut().for_each(|p| *p /= n);
    let mut var = [0.0; 3];
    for s in samples {
        for k in 0..3 {
            var[k] += (s[k] - probs[k]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    RoiPrediction { probs, per_class_variance: var }
}

/// `passes` stochastic forward passes with inverted dropout on the last hidden layer.
///
/// `stream` names the random stream (e.g. study id and ROI index) so that
/// every ROI draws independent, reproducible masks.
pub fn mc_predict_roi(model: &MlpModel, features: &[f64], passes: usize, seed: u64, stream: &str) -> RoiPrediction {
    let hidden = model.penultimate(features);
    let rate = model.dropout_rate;
    // without dropout every pass is the same forward pass
    let passes = if rate > 0.0 { passes.max(1) } else { 1 };
    let mut rng = stage_rng(seed, stream, "mc-dropout");
    let scale = 1.0 / (1.0 - rate);
    let mut masked = vec![0.0; hidden.len()];
    let samples: Vec<[f64; 3]> = (0..passes)
        .map(|_| {
            for (m, h) in masked.iter_mut().zip(&hidden) {
                *m = if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { h * scale };
            }
            let p = model.net.head(&masked);
            [p[0], p[1], p[2]]
        })
        .collect();
    summarize_passes(&samples)
}

/// Averages ROI predictions into a study prediction; no ROIs means localization failure.
pub fn aggregate_study(rois: &[RoiPrediction]) -> StudyPrediction {
    if rois.is_empty() {
        return StudyPrediction::not_localized();
    }
    let n = rois.len() as f64;
    let mut probs = [0.0; 3];
    for r in rois {
        for k in 0..3 {
            probs[k] += r.probs[k];
        }
    }
    probs.iter_mut().for_each(|p| *p /= n);
    let uncertainty = rois.iter().map(RoiPrediction::uncertainty).sum::<f64>() / n;
    StudyPrediction {
        probs,
        uncertainty,
        confidence: 1.0 - uncertainty,
        predicted: Some(argmax(&probs)),
        localized: true,
    }
}
