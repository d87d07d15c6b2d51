//! Evaluation protocol: folds, categorical metrics, LROC, confidence sweeps,
//! size strata and reader comparison.

pub mod folds;
pub mod lroc;
pub mod metrics;
pub mod readers;
pub mod sweep;

pub use folds::{stratified_folds, FoldSplit};
pub use lroc::{lroc_curve, sensitivity_at_specificity, LrocCurve, LrocEntry, LrocPoint};
pub use metrics::{categorical_metrics, CategoricalMetrics, ClassMetrics, MeanSd, Outcome};
pub use readers::{reader_compare, synthetic_reader, ReaderRecord, ReaderSummary};
pub use sweep::{confidence_sweep, retention_threshold, ConfidenceSweep, SweepPoint};

use serde::{Deserialize, Serialize};

use crate::classify::StudyPrediction;
use crate::error::Result;
use crate::model::{LesionClass, LocalizationRule};

/// Largest-lesion size split, at 20 mm inclusive on the small side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeStratum {
    #[serde(rename = "gt2cm")]
    Over2cm,
    #[serde(rename = "le2cm")]
    UpTo2cm,
}

pub const SIZE_STRATUM_MM: f64 = 20.0;

pub fn size_stratum(largest_lesion_mm: f64) -> SizeStratum {
    if largest_lesion_mm > SIZE_STRATUM_MM {
        SizeStratum::Over2cm
    } else {
        SizeStratum::UpTo2cm
    }
}

/// Partitions `(id, largest lesion mm)` pairs into `(> 2 cm, <= 2 cm)` id lists.
pub fn size_strata<'a>(studies: impl IntoIterator<Item = (&'a str, f64)>) -> (Vec<String>, Vec<String>) {
    let mut over = Vec::new();
    let mut under = Vec::new();
    for (id, mm) in studies {
        match size_stratum(mm) {
            SizeStratum::Over2cm => over.push(id.to_string()),
            SizeStratum::UpTo2cm => under.push(id.to_string()),
        }
    }
    (over, under)
}

/// Everything the evaluation needs to know about one tested study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub study_id: String,
    pub truth: LesionClass,
    pub prediction: StudyPrediction,
    /// Some key ROI centre lies inside a truth box on its slice.
    pub roi_hit: bool,
    pub largest_lesion_mm: f64,
    pub fold: usize,
}

impl EvalRecord {
    pub fn outcome(&self) -> Outcome {
        Outcome { truth: self.truth, predicted: self.prediction.predicted }
    }

    pub fn localized_under(&self, rule: LocalizationRule) -> bool {
        match rule {
            LocalizationRule::CenterInTruthBox => self.prediction.localized && self.roi_hit,
            LocalizationRule::AnyRoi => self.prediction.localized,
        }
    }

    fn lroc_entry(&self, rule: LocalizationRule) -> LrocEntry {
        LrocEntry {
            score: self.prediction.localized.then(|| self.prediction.probs[LesionClass::Hcc.index()]),
            positive: self.truth == LesionClass::Hcc,
            localized: self.localized_under(rule),
        }
    }
}

/// HCC-vs-others LROC over a set of records.
pub fn hcc_lroc(records: &[&EvalRecord], rule: LocalizationRule) -> Result<LrocCurve> {
    let entries: Vec<LrocEntry> = records.iter().map(|r| r.lroc_entry(rule)).collect();
    lroc_curve(&entries)
}

pub fn outcomes(records: &[&EvalRecord]) -> Vec<Outcome> {
    records.iter().map(|r| r.outcome()).collect()
}

pub fn sweep_items(records: &[&EvalRecord]) -> Vec<(Outcome, f64)> {
    records.iter().map(|r| (r.outcome(), r.prediction.confidence)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratum_boundaries() {
        assert_eq!(size_stratum(25.0), SizeStratum::Over2cm);
        assert_eq!(size_stratum(20.0), SizeStratum::UpTo2cm);
        let (o, u) = size_strata([("a", 25.0), ("b", 20.0), ("c", 20.5)]);
        assert_eq!(o, vec!["a", "c"]);
        assert_eq!(u, vec!["b"]);
    }
}
