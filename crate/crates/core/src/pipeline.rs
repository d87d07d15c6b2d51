//! End-to-end cross-validated run: detect, fuse, train per fold, classify
//! with MC dropout, and evaluate.
//!
//! Studies are reduced to a small [`StudyDigest`] as soon as they are loaded
//! so the full cohort of volumes never has to sit in memory at once.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{predict_study, roi_features, train_with_validation, RoiFeatures, DEFAULT_LAYER_SIZES};
use crate::detect::{Detector, DogDetector};
use crate::error::{Error, Result};
use crate::eval::{
    categorical_metrics, confidence_sweep, hcc_lroc, outcomes, retention_threshold,
    sensitivity_at_specificity, size_stratum, stratified_folds, sweep_items, CategoricalMetrics,
    ConfidenceSweep, EvalRecord, LrocCurve, MeanSd, SizeStratum,
};
use crate::fuse::{localize_study, KeyRoi};
use crate::io::study_dir::{list_study_dirs, read_study};
use crate::model::{LesionClass, PipelineConfig, Study};
use crate::par;
use crate::rng::derive_seed;
use crate::synth::{generate_study, GenSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Share of studies kept by the confidence-filtered summary.
pub const RETENTION_TARGET: f64 = 0.7;
/// Specificity at which the sensitivity summary is read.
pub const SUMMARY_SPECIFICITY: f64 = 0.8;
/// Truth boxes narrower than this are too small to yield a ring feature.
const MIN_TRAIN_BOX_SIDE: i64 = 3;

/// Where studies come from.
#[derive(Debug, Clone)]
pub enum CohortSource {
    Generated(GenSpec),
    Directory(PathBuf),
}

/// What the rest of the pipeline needs to know about one study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDigest {
    pub id: String,
    pub truth: LesionClass,
    pub largest_lesion_mm: f64,
    pub key_rois: Vec<KeyRoi>,
    pub key_roi_features: Vec<RoiFeatures>,
    /// Some key ROI centre lies in a truth box on its slice.
    pub roi_hit: bool,
    /// Labelled training examples: truth-box ROIs plus key ROIs that hit a lesion.
    pub train_features: Vec<Vec<f64>>,
    pub box_count: usize,
}

pub fn roi_hits_truth(study: &Study, roi: &KeyRoi) -> bool {
    let (cx, cy) = roi.bbox.center();
    study
        .truth_boxes
        .iter()
        .any(|t| t.z == roi.z && t.bbox.contains(cx, cy))
}

/// Features of every truth box large enough to have a surrounding ring.
pub fn truth_box_features(study: &Study) -> Vec<Vec<f64>> {
    study
        .truth_boxes
        .iter()
        .filter(|t| t.bbox.width() >= MIN_TRAIN_BOX_SIDE && t.bbox.height() >= MIN_TRAIN_BOX_SIDE)
        .map(|t| crate::classify::extract_features(study, t.z, &t.bbox).0)
        .collect()
}

/// Runs detection and localization on one study and extracts its features.
pub fn digest_study(study: &Study, cfg: &PipelineConfig, detector: &dyn Detector) -> Result<StudyDigest> {
    let [nx, ny, _] = study.dims();
    let boxes = detector.detect(study)?;
    let key_rois = localize_study(&boxes, nx, ny, cfg.roi_conf_threshold, cfg.keyroi_keep_fraction);
    let key_roi_features: Vec<RoiFeatures> = key_rois.iter().map(|r| roi_features(study, r)).collect();
    let hits: Vec<bool> = key_rois.iter().map(|r| roi_hits_truth(study, r)).collect();
    let mut train_features = truth_box_features(study);
    train_features.extend(
        key_roi_features
            .iter()
            .zip(&hits)
            .filter(|(_, h)| **h)
            .map(|(f, _)| f.0.clone()),
    );
    Ok(StudyDigest {
        id: study.id.clone(),
        truth: study.truth_class,
        largest_lesion_mm: study.largest_lesion_mm(),
        roi_hit: hits.iter().any(|h| *h),
        key_rois,
        key_roi_features,
        train_features,
        box_count: boxes.len(),
    })
}

/// Loads (or generates) and digests every study, in id order.
pub fn digest_cohort(
    source: &CohortSource,
    cfg: &PipelineConfig,
    detector: &dyn Detector,
) -> Result<(Vec<StudyDigest>, String)> {
    match source {
        CohortSource::Generated(spec) => {
            spec.validate()?;
            let digests = par::map_indices(spec.total(), |i| {
                digest_study(&generate_study(spec, i)?, cfg, detector)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let fingerprint = hex(&Sha256::digest(serde_json::to_vec(spec)?));
            Ok((digests, fingerprint))
        }
        CohortSource::Directory(dir) => {
            let dirs = list_study_dirs(dir)?;
            let results = par::map_slice(&dirs, |d| -> Result<(StudyDigest, Vec<u8>)> {
                let study = read_study(d)?;
                Ok((digest_study(&study, cfg, detector)?, study_hash(&study)))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut h = Sha256::new();
            let mut digests = Vec::with_capacity(results.len());
            for (d, sh) in results {
                h.update(d.id.as_bytes());
                h.update(&sh);
                digests.push(d);
            }
            digests.sort_by(|a, b| a.id.cmp(&b.id));
            if digests.windows(2).any(|w| w[0].id == w[1].id) {
                return Err(Error::Ingestion(format!("duplicate study ids under {}", dir.display())));
            }
            Ok((digests, hex(&h.finalize())))
        }
    }
}

fn study_hash(study: &Study) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(study.truth_class.name().as_bytes());
    for (kind, vol) in &study.volumes {
        h.update(kind.name().as_bytes());
        for v in &vol.voxels {
            h.update(v.to_le_bytes());
        }
    }
    for t in &study.truth_boxes {
        for v in [t.z as i64, t.bbox.x0, t.bbox.y0, t.bbox.x1, t.bbox.y1] {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().to_vec()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_examples: usize,
    pub final_loss: f64,
    pub metrics: CategoricalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub sensitivity: MeanSd,
    pub specificity: MeanSd,
    pub f1: MeanSd,
}

/// Mean and population SD across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: MeanSd,
    pub mean_f1: MeanSd,
    pub per_class: BTreeMap<LesionClass, ClassSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub n: usize,
    pub positives: usize,
    pub area: f64,
    pub max_sensitivity: f64,
    /// `None` when the set has no negatives.
    pub sens_at_80_spec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionSide {
    pub n: usize,
    pub accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
    pub sens_at_80_spec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionSummary {
    pub target: f64,
    pub threshold: f64,
    pub retained_fraction: f64,
    pub unfiltered: RetentionSide,
    pub filtered: RetentionSide,
}

/// Contents of `metrics.json`. Holds nothing run-specific, so equal configs
/// and data give byte-equal files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: String,
    pub manifest_hash: String,
    pub n_studies: usize,
    pub localization_failures: usize,
    pub folds: Vec<FoldReport>,
    pub summary: FoldSummary,
    pub pooled: CategoricalMetrics,
    pub lroc: BTreeMap<String, CurveSummary>,
    pub retention: RetentionSummary,
}

/// Everything a run produces in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: MetricsReport,
    pub records: Vec<EvalRecord>,
    /// Keys `all`, `gt2cm`, `le2cm`.
    pub curves: BTreeMap<String, LrocCurve>,
    pub sweep: ConfidenceSweep,
}

/// Hash of everything that determines the run's results.
pub fn manifest_hash(cfg: &PipelineConfig, data_fingerprint: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(VERSION.as_bytes());
    h.update(serde_json::to_vec(cfg)?);
    h.update(data_fingerprint.as_bytes());
    Ok(hex(&h.finalize()))
}

fn training_set(digests: &BTreeMap<&str, &StudyDigest>, ids: &[String]) -> Vec<(Vec<f64>, LesionClass)> {
    ids.iter()
        .flat_map(|id| {
            let d = digests[id.as_str()];
            d.train_features.iter().map(move |f| (f.clone(), d.truth))
        })
        .collect()
}

fn curve_summary(records: &[&EvalRecord], cfg: &PipelineConfig) -> Result<(LrocCurve, CurveSummary)> {
    let curve = hcc_lroc(records, cfg.localization_rule)?;
    let positives = records.iter().filter(|r| r.truth == LesionClass::Hcc).count();
    let sens = if records.len() > positives {
        Some(sensitivity_at_specificity(&curve, SUMMARY_SPECIFICITY)?)
    } else {
        None
    };
    let summary = CurveSummary {
        n: records.len(),
        positives,
        area: curve.area,
        max_sensitivity: curve.max_sensitivity,
        sens_at_80_spec: sens,
    };
    Ok((curve, summary))
}

fn retention_side(records: &[&EvalRecord], cfg: &PipelineConfig) -> Result<RetentionSide> {
    let m = categorical_metrics(&outcomes(records));
    let positives = records.iter().filter(|r| r.truth == LesionClass::Hcc).count();
    let sens = if positives > 0 && records.len() > positives {
        Some(curve_summary(records, cfg)?.1.sens_at_80_spec.unwrap_or(0.0))
    } else {
        None
    };
    Ok(RetentionSide { n: records.len(), accuracy: m.accuracy, mean_f1: m.mean_f1, sens_at_80_spec: sens })
}

/// Sweep thresholds: 0.00, 0.01, ..., 1.00.
pub fn sweep_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

fn summarize_folds(folds: &[FoldReport]) -> FoldSummary {
    let of = |f: &dyn Fn(&FoldReport) -> f64| MeanSd::of(&folds.iter().map(f).collect::<Vec<_>>());
    let per_class = LesionClass::ALL
        .into_iter()
        .map(|c| {
            let i = c.index();
            (
                c,
                ClassSummary {
                    sensitivity: of(&|r| r.metrics.per_class[i].sensitivity),
                    specificity: of(&|r| r.metrics.per_class[i].specificity),
                    f1: of(&|r| r.metrics.per_class[i].f1),
                },
            )
        })
        .collect();
    FoldSummary {
        accuracy: of(&|r| r.metrics.accuracy.unwrap_or(0.0)),
        mean_f1: of(&|r| r.metrics.mean_f1.unwrap_or(0.0)),
        per_class,
    }
}

/// Cross-validated training and evaluation over digested studies.
pub fn evaluate(digests: &[StudyDigest], cfg: &PipelineConfig, data_fingerprint: &str) -> Result<PipelineOutput> {
    cfg.validate()?;
    let by_id: BTreeMap<&str, &StudyDigest> = digests.iter().map(|d| (d.id.as_str(), d)).collect();
    if by_id.len() != digests.len() {
        return Err(Error::Ingestion("duplicate study ids".into()));
    }
    let cohort: Vec<(String, LesionClass)> = digests.iter().map(|d| (d.id.clone(), d.truth)).collect();
    let splits = stratified_folds(&cohort, cfg.folds, cfg.val_fraction, cfg.seed)?;

    let fold_results = par::map_slice(&splits, |split| -> Result<(FoldReport, Vec<EvalRecord>)> {
        let train = training_set(&by_id, &split.train_ids);
        let val = training_set(&by_id, &split.val_ids);
        let fold_seed = derive_seed(cfg.seed, &format!("fold{}", split.fold_index), "train");
        let model = train_with_validation(&DEFAULT_LAYER_SIZES, cfg.dropout_rate, &cfg.train, fold_seed, &train, &val)
            .map_err(|e| Error::Training(format!("fold {}: {e}", split.fold_index)))?;
        let mc_seed = derive_seed(cfg.seed, &format!("fold{}", split.fold_index), "mc");
        let records: Vec<EvalRecord> = split
            .test_ids
            .iter()
            .map(|id| {
                let d = by_id[id.as_str()];
                EvalRecord {
                    study_id: d.id.clone(),
                    truth: d.truth,
                    prediction: predict_study(&model, &d.id, &d.key_roi_features, cfg.mc_passes, mc_seed),
                    roi_hit: d.roi_hit,
                    largest_lesion_mm: d.largest_lesion_mm,
                    fold: split.fold_index,
                }
            })
            .collect();
        let metrics = categorical_metrics(&outcomes(&records.iter().collect::<Vec<_>>()));
        let report = FoldReport {
            fold: split.fold_index,
            n_train: split.train_ids.len(),
            n_val: split.val_ids.len(),
            n_test: split.test_ids.len(),
            train_examples: train.len(),
            final_loss: model.final_loss,
            metrics,
        };
        Ok((report, records))
    });

    let mut folds = Vec::new();
    let mut records = Vec::new();
    for r in fold_results {
        let (f, recs) = r?;
        folds.push(f);
        records.extend(recs);
    }
    records.sort_by(|a, b| a.study_id.cmp(&b.study_id));
    let all: Vec<&EvalRecord> = records.iter().collect();

    let mut curves = BTreeMap::new();
    let mut lroc = BTreeMap::new();
    let strata: [(&str, Option<SizeStratum>); 3] =
        [("all", None), ("gt2cm", Some(SizeStratum::Over2cm)), ("le2cm", Some(SizeStratum::UpTo2cm))];
    for (name, stratum) in strata {
        let subset: Vec<&EvalRecord> = all
            .iter()
            .copied()
            .filter(|r| stratum.is_none_or(|s| size_stratum(r.largest_lesion_mm) == s))
            .collect();
        let (curve, summary) = curve_summary(&subset, cfg)?;
        curves.insert(name.to_string(), curve);
        lroc.insert(name.to_string(), summary);
    }

    let items = sweep_items(&all);
    let sweep = confidence_sweep(&items, &sweep_thresholds())?;
    let confidences: Vec<f64> = items.iter().map(|(_, c)| *c).collect();
    let threshold = retention_threshold(&confidences, RETENTION_TARGET)?;
    let kept: Vec<&EvalRecord> = all.iter().copied().filter(|r| r.prediction.confidence >= threshold).collect();
    let retention = RetentionSummary {
        target: RETENTION_TARGET,
        threshold,
        retained_fraction: kept.len() as f64 / all.len().max(1) as f64,
        unfiltered: retention_side(&all, cfg)?,
        filtered: retention_side(&kept, cfg)?,
    };

    let pooled = categorical_metrics(&outcomes(&all));
    let report = MetricsReport {
        version: VERSION.to_string(),
        manifest_hash: manifest_hash(cfg, data_fingerprint)?,
        n_studies: records.len(),
        localization_failures: pooled.localization_failures,
        summary: summarize_folds(&folds),
        folds,
        pooled,
        lroc,
        retention,
    };
    Ok(PipelineOutput { report, records, curves, sweep })
}

/// Digest then evaluate with the reference detector.
pub fn run_pipeline(source: &CohortSource, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let detector = DogDetector { params: cfg.detector.clone() };
    let (digests, fingerprint) = digest_cohort(source, cfg, &detector)?;
    evaluate(&digests, cfg, &fingerprint)
}
