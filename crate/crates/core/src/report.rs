//! Pipeline artifacts on disk and the human-readable summary.
//!
//! | file              | columns                                                        |
//! |-------------------|----------------------------------------------------------------|
//! | `lroc*.csv`       | `threshold,fpf,tpf`                                            |
//! | `sweep.csv`       | `threshold,retained,retained_fraction,accuracy,mean_f1`        |
//! | `failures.csv`    | `study_id,truth,fold`                                          |
//! | `readers_overlay.csv` | `series,kind,fpf,tpf,threshold`                        |
//! | `predictions.csv` | `study_id,truth,predicted,p_hcc,p_icc,p_meta,uncertainty,confidence,localized,roi_hit,largest_lesion_mm,fold` |
//!
//! `metrics.json` holds the [`MetricsReport`]; `run_manifest.json` records
//! the config, timings, paths and a sha256 for every other artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{EvalRecord, LrocCurve, ReaderSummary};
use crate::io::{read_csv, read_json, write_csv, write_json};
use crate::model::{LesionClass, PipelineConfig};
use crate::pipeline::{hex, MetricsReport, PipelineOutput, SUMMARY_SPECIFICITY, VERSION};

pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const LROC_FILES: [(&str, &str); 3] = [("all", "lroc.csv"), ("gt2cm", "lroc_gt2cm.csv"), ("le2cm", "lroc_le2cm.csv")];
pub const SWEEP_FILE: &str = "sweep.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

pub const LROC_HEADER: [&str; 3] = ["threshold", "fpf", "tpf"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

/// Provenance of one run. Unlike `metrics.json` it carries timings and paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub stage_seconds: BTreeMap<String, f64>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Serialize, Deserialize)]
struct LrocRow {
    threshold: f64,
    fpf: f64,
    tpf: f64,
}

#[derive(Serialize)]
struct FailureRow<'a> {
    study_id: &'a str,
    truth: LesionClass,
    fold: usize,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    study_id: &'a str,
    truth: LesionClass,
    predicted: Option<LesionClass>,
    p_hcc: f64,
    p_icc: f64,
    p_meta: f64,
    uncertainty: f64,
    confidence: f64,
    localized: bool,
    roi_hit: bool,
    largest_lesion_mm: f64,
    fold: usize,
}

pub fn write_lroc_csv(path: &Path, curve: &LrocCurve) -> Result<()> {
    let rows: Vec<LrocRow> =
        curve.points.iter().map(|p| LrocRow { threshold: p.threshold, fpf: p.fpf, tpf: p.tpf }).collect();
    write_csv(path, &LROC_HEADER, &rows)
}

fn write_predictions(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let rows: Vec<PredictionRow> = records
        .iter()
        .map(|r| PredictionRow {
            study_id: &r.study_id,
            truth: r.truth,
            predicted: r.prediction.predicted,
            p_hcc: r.prediction.probs[0],
            p_icc: r.prediction.probs[1],
            p_meta: r.prediction.probs[2],
            uncertainty: r.prediction.uncertainty,
            confidence: r.prediction.confidence,
            localized: r.prediction.localized,
            roi_hit: r.roi_hit,
            largest_lesion_mm: r.largest_lesion_mm,
            fold: r.fold,
        })
        .collect();
    write_csv(
        path,
        &[
            "study_id", "truth", "predicted", "p_hcc", "p_icc", "p_meta", "uncertainty", "confidence",
            "localized", "roi_hit", "largest_lesion_mm", "fold",
        ],
        &rows,
    )
}

/// One point of the reader overlay: either an LROC curve point (`kind =
/// "curve"`) or a reader operating point (`kind = "reader"`, no threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub series: String,
    pub kind: String,
    pub fpf: f64,
    pub tpf: f64,
    pub threshold: Option<f64>,
}

pub const OVERLAY_HEADER: [&str; 5] = ["series", "kind", "fpf", "tpf", "threshold"];

/// Curve points from `lroc` (if given) followed by each reader's HCC operating point.
pub fn reader_overlay(summaries: &[ReaderSummary], lroc: Option<&Path>) -> Result<Vec<OverlayRow>> {
    let mut rows = Vec::new();
    if let Some(path) = lroc {
        for p in read_csv::<LrocRow>(path)? {
            rows.push(OverlayRow {
                series: "cad".into(),
                kind: "curve".into(),
                fpf: p.fpf,
                tpf: p.tpf,
                threshold: Some(p.threshold),
            });
        }
    }
    for s in summaries {
        rows.push(OverlayRow {
            series: s.reader_id.clone(),
            kind: "reader".into(),
            fpf: s.operating_point.0,
            tpf: s.operating_point.1,
            threshold: None,
        });
    }
    Ok(rows)
}

pub fn write_overlay_csv(path: &Path, rows: &[OverlayRow]) -> Result<()> {
    write_csv(path, &OVERLAY_HEADER, rows)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

/// Writes every deterministic artifact of a run and returns their paths.
pub fn write_outputs(out: &Path, output: &PipelineOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let metrics = out.join(METRICS_FILE);
    write_json(&metrics, &output.report)?;
    written.push(metrics);
    for (key, file) in LROC_FILES {
        let curve = output
            .curves
            .get(key)
            .ok_or_else(|| Error::Metric(format!("missing curve {key}")))?;
        let path = out.join(file);
        write_lroc_csv(&path, curve)?;
        written.push(path);
    }
    let sweep = out.join(SWEEP_FILE);
    write_csv(
        &sweep,
        &["threshold", "retained", "retained_fraction", "accuracy", "mean_f1"],
        &output.sweep.points,
    )?;
    written.push(sweep);
    let failures: Vec<FailureRow> = output
        .records
        .iter()
        .filter(|r| !r.prediction.localized)
        .map(|r| FailureRow { study_id: &r.study_id, truth: r.truth, fold: r.fold })
        .collect();
    let fpath = out.join(FAILURES_FILE);
    write_csv(&fpath, &["study_id", "truth", "fold"], &failures)?;
    written.push(fpath);
    let ppath = out.join(PREDICTIONS_FILE);
    write_predictions(&ppath, &output.records)?;
    written.push(ppath);
    Ok(written)
}

/// Writes `run_manifest.json` covering `artifacts`.
pub fn write_run_manifest(
    out: &Path,
    report: &MetricsReport,
    config: &PipelineConfig,
    inputs: Vec<String>,
    stage_seconds: BTreeMap<String, f64>,
    artifacts: &[PathBuf],
) -> Result<RunManifest> {
    let artifacts = artifacts
        .iter()
        .map(|p| {
            Ok(ArtifactEntry {
                file: p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: file_sha256(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        version: VERSION.to_string(),
        manifest_hash: report.manifest_hash.clone(),
        seed: config.seed,
        config: config.clone(),
        inputs,
        output_dir: out.display().to_string(),
        stage_seconds,
        artifacts,
    };
    write_json(&out.join(RUN_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_metrics(out: &Path) -> Result<MetricsReport> {
    let path = out.join(METRICS_FILE);
    if !path.is_file() {
        return Err(Error::format(out, "no metrics.json; run the pipeline first"));
    }
    read_json(&path)
}

fn pct(v: f64) -> String {
    if v.is_finite() {
        format!("{:.1}", 100.0 * v)
    } else {
        "-".into()
    }
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), pct)
}

/// Text table of fold-averaged metrics plus curve and retention summaries.
pub fn render_report(r: &MetricsReport) -> String {
    let mut s = String::new();
    let ms = |m: &crate::eval::MeanSd| format!("{} ± {}", pct(m.mean), pct(m.sd));
    let _ = writeln!(s, "lesion-cad {}  manifest {}", r.version, r.manifest_hash);
    let _ = writeln!(
        s,
        "{} studies, {} folds, {} localization failures\n",
        r.n_studies,
        r.folds.len(),
        r.localization_failures
    );
    let _ = writeln!(s, "{:<28}{:>18}", "Metric (%)", "mean ± sd");
    let _ = writeln!(s, "{:<28}{:>18}", "Accuracy", ms(&r.summary.accuracy));
    let _ = writeln!(s, "{:<28}{:>18}", "Mean F1", ms(&r.summary.mean_f1));
    for (class, m) in &r.summary.per_class {
        let _ = writeln!(s, "{:<28}{:>18}", format!("{class} Sensitivity"), ms(&m.sensitivity));
        let _ = writeln!(s, "{:<28}{:>18}", format!("{class} Specificity"), ms(&m.specificity));
        let _ = writeln!(s, "{:<28}{:>18}", format!("{class} F1"), ms(&m.f1));
    }
    let spec_label = format!("Sens@{:.0}%Spec", 100.0 * SUMMARY_SPECIFICITY);
    let _ = writeln!(s, "\nHCC LROC        {:>6} {:>8} {:>14} {:>6} {:>10}", "n", "AUC", "Max sens", "", spec_label);
    for (name, c) in &r.lroc {
        let _ = writeln!(
            s,
            "  {:<13} {:>6} {:>8} {:>14} {:>6} {:>10}",
            name,
            c.n,
            format!("{:.3}", c.area),
            pct(c.max_sensitivity),
            "",
            opt_pct(c.sens_at_80_spec)
        );
    }
    let rt = &r.retention;
    let _ = writeln!(
        s,
        "\nRetention {}% (confidence >= {:.6}, kept {}%)",
        pct(rt.target),
        rt.threshold,
        pct(rt.retained_fraction)
    );
    let _ = writeln!(s, "  {:<12}{:>8}{:>10}{:>10}{:>16}", "", "n", "Accuracy", "Mean F1", spec_label);
    for (name, side) in [("unfiltered", &rt.unfiltered), ("filtered", &rt.filtered)] {
        let _ = writeln!(
            s,
            "  {:<12}{:>8}{:>10}{:>10}{:>16}",
            name,
            side.n,
            opt_pct(side.accuracy),
            opt_pct(side.mean_f1),
            opt_pct(side.sens_at_80_spec)
        );
    }
    s
}
