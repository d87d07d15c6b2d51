//! Human reader ingestion and comparison.
//!
//! Readers get operating points and ordinal-confidence retention sweeps; no
//! ROC curve is built from their 1-5 confidence scores.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{categorical_metrics, CategoricalMetrics, Outcome};
use crate::eval::sweep::{confidence_sweep, SweepPoint};
use crate::model::LesionClass;
use crate::rng::stage_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderRecord {
    pub study_id: String,
    pub reader_id: String,
    pub label: LesionClass,
    /// Ordinal 1 (unsure) to 5 (certain).
    pub confidence: u8,
}

#[derive(Debug, Deserialize)]
struct RawReaderRow {
    study_id: String,
    reader_id: String,
    label: String,
    confidence: String,
}

/// Reads and validates a reader CSV (`study_id,reader_id,label,confidence`).
pub fn read_reader_csv(path: impl AsRef<Path>) -> Result<Vec<ReaderRecord>> {
    let rows: Vec<RawReaderRow> = crate::io::read_csv(path.as_ref())?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows.into_iter().enumerate() {
        let confidence: u8 = r
            .confidence
            .trim()
            .parse()
            .ok()
            .filter(|c| (1..=5).contains(c))
            .ok_or_else(|| {
                Error::Ingestion(format!("row {}: confidence `{}` not in 1..5", line + 1, r.confidence))
            })?;
        out.push(ReaderRecord {
            study_id: r.study_id,
            reader_id: r.reader_id,
            label: r.label.parse()?,
            confidence,
        });
    }
    Ok(out)
}

/// Checks confidence range, duplicate `(study, reader)` pairs and unknown studies.
pub fn validate_readers(records: &[ReaderRecord], truth: &BTreeMap<String, LesionClass>) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut unknown = BTreeSet::new();
    for r in records {
        if !(1..=5).contains(&r.confidence) {
            return Err(Error::Ingestion(format!(
                "reader {} study {}: confidence {} not in 1..5",
                r.reader_id, r.study_id, r.confidence
            )));
        }
        if !seen.insert((&r.reader_id, &r.study_id)) {
            return Err(Error::Ingestion(format!(
                "reader {} labelled study {} more than once",
                r.reader_id, r.study_id
            )));
        }
        if !truth.contains_key(&r.study_id) {
            unknown.insert(r.study_id.as_str());
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Ingestion(format!(
            "unknown study ids: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderSummary {
    pub reader_id: String,
    pub metrics: CategoricalMetrics,
    /// HCC-vs-others `(FPF, TPF)`.
    pub operating_point: (f64, f64),
    /// Retention sweep over ordinal confidence thresholds 1..=5.
    pub sweep: Vec<SweepPoint>,
}

pub fn reader_compare(records: &[ReaderRecord], truth: &BTreeMap<String, LesionClass>) -> Result<Vec<ReaderSummary>> {
    validate_readers(records, truth)?;
    let mut by_reader: BTreeMap<&str, Vec<(Outcome, f64)>> = BTreeMap::new();
    for r in records {
        by_reader.entry(&r.reader_id).or_default().push((
            Outcome { truth: truth[&r.study_id], predicted: Some(r.label) },
            r.confidence as f64,
        ));
    }
    by_reader
        .into_iter()
        .map(|(id, items)| {
            let outcomes: Vec<Outcome> = items.iter().map(|(o, _)| *o).collect();
            let metrics = categorical_metrics(&outcomes);
            let operating_point = metrics.per_class[LesionClass::Hcc.index()].operating_point();
            let sweep = confidence_sweep(&items, &[1.0, 2.0, 3.0, 4.0, 5.0])?.points;
            Ok(ReaderSummary { reader_id: id.to_string(), metrics, operating_point, sweep })
        })
        .collect()
}

/// Simulated reader: each label is swapped for a different random class with
/// probability `error_rate`; correct reads get confidence 4-5, wrong ones 1-3.
pub fn synthetic_reader(
    truth: &[(String, LesionClass)],
    reader_id: &str,
    error_rate: f64,
    seed: u64,
) -> Vec<ReaderRecord> {
    let mut rng = stage_rng(seed, reader_id, "reader");
    truth
        .iter()
        .map(|(id, c)| {
            let wrong = rng.random::<f64>() < error_rate;
            let label = if wrong {
                let shift = rng.random_range(1..LesionClass::COUNT);
                LesionClass::from_index((c.index() + shift) % LesionClass::COUNT).unwrap()
            } else {
                *c
            };
            let confidence = if wrong { rng.random_range(1..=3) } else { rng.random_range(4..=5) };
            ReaderRecord { study_id: id.clone(), reader_id: reader_id.to_string(), label, confidence }
        })
        .collect()
}
