//! ROI characterisation: features, MLP, MC-dropout inference and a replay
//! classifier for externally produced per-pass probabilities.

pub mod features;
pub mod mc;
pub mod mlp;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{extract_features, RoiFeatures, FEATURES_PER_SEQUENCE, FEATURE_LEN};
pub use mc::{aggregate_study, argmax, mc_predict_roi, summarize_passes, RoiPrediction, StudyPrediction};
pub use mlp::{train, train_with_validation, Mlp, MlpModel, DEFAULT_LAYER_SIZES};

use crate::error::{Error, Result};
use crate::fuse::KeyRoi;
use crate::model::Study;

pub fn roi_features(study: &Study, roi: &KeyRoi) -> RoiFeatures {
    extract_features(study, roi.z, &roi.bbox)
}

/// MC-dropout prediction for every key ROI of a study, aggregated.
pub fn predict_study(model: &MlpModel, study_id: &str, features: &[RoiFeatures], passes: usize, seed: u64) -> StudyPrediction {
    let rois: Vec<RoiPrediction> = features
        .iter()
        .enumerate()
        .map(|(i, f)| mc_predict_roi(model, f.as_slice(), passes, seed, &format!("{study_id}#{i}")))
        .collect();
    aggregate_study(&rois)
}

/// Row of a study prediction CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub study_id: String,
    pub predicted: Option<crate::model::LesionClass>,
    pub p_hcc: f64,
    pub p_icc: f64,
    pub p_meta: f64,
    pub uncertainty: f64,
    pub confidence: f64,
    pub localized: bool,
}

impl PredictionRecord {
    pub const HEADER: [&'static str; 8] =
        ["study_id", "predicted", "p_hcc", "p_icc", "p_meta", "uncertainty", "confidence", "localized"];

    pub fn new(study_id: &str, p: &StudyPrediction) -> Self {
        PredictionRecord {
            study_id: study_id.to_string(),
            predicted: p.predicted,
            p_hcc: p.probs[0],
            p_icc: p.probs[1],
            p_meta: p.probs[2],
            uncertainty: p.uncertainty,
            confidence: p.confidence,
            localized: p.localized,
        }
    }
}

/// Row of the replay classifier CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub study_id: String,
    pub roi_index: usize,
    pub pass_index: usize,
    pub p_hcc: f64,
    pub p_icc: f64,
    pub p_meta: f64,
}

/// Study predictions rebuilt from per-pass probabilities computed elsewhere.
#[derive(Debug, Clone, Default)]
pub struct ReplayClassifier {
    studies: BTreeMap<String, StudyPrediction>,
}

impl ReplayClassifier {
    pub fn from_records(records: impl IntoIterator<Item = PassRecord>) -> Result<Self> {
        let mut grouped: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, [f64; 3]>>> = BTreeMap::new();
        for r in records {
            let p = [r.p_hcc, r.p_icc, r.p_meta];
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::Ingestion(format!(
                    "study {} roi {} pass {}: probabilities must lie in [0,1] and sum to 1",
                    r.study_id, r.roi_index, r.pass_index
                )));
            }
            let passes = grouped.entry(r.study_id.clone()).or_default().entry(r.roi_index).or_default();
            if passes.insert(r.pass_index, p).is_some() {
                return Err(Error::Ingestion(format!(
                    "study {} roi {}: duplicate pass {}",
                    r.study_id, r.roi_index, r.pass_index
                )));
            }
        }
        let studies = grouped
            .into_iter()
            .map(|(id, rois)| {
                let preds: Vec<RoiPrediction> = rois
                    .values()
                    .map(|passes| summarize_passes(&passes.values().copied().collect::<Vec<_>>()))
                    .collect();
                (id, aggregate_study(&preds))
            })
            .collect();
        Ok(ReplayClassifier { studies })
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(crate::io::read_csv::<PassRecord>(path.as_ref())?)
    }

    /// Studies absent from the file are localization failures.
    pub fn predict(&self, study_id: &str) -> StudyPrediction {
        self.studies.get(study_id).cloned().unwrap_or_else(StudyPrediction::not_localized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, roi: usize, pass: usize, p: [f64; 3]) -> PassRecord {
        PassRecord { study_id: id.into(), roi_index: roi, pass_index: pass, p_hcc: p[0], p_icc: p[1], p_meta: p[2] }
    }

    #[test]
    fn replay_reproduces_alternating_example() {
        let recs = (0..100).map(|i| rec("a", 0, i, if i % 2 == 0 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] }));
        let c = ReplayClassifier::from_records(recs).unwrap();
        let s = c.predict("a");
        assert_eq!(s.confidence, 0.5);
        assert!(!c.predict("missing").localized);
    }

    #[test]
    fn replay_rejects_bad_rows() {
        assert!(ReplayClassifier::from_records([rec("a", 0, 0, [0.5, 0.6, 0.0])]).is_err());
        assert!(ReplayClassifier::from_records([rec("a", 0, 0, [1.0, 0.0, 0.0]), rec("a", 0, 0, [1.0, 0.0, 0.0])]).is_err());
    }
}
