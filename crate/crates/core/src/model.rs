//! Shared domain types and the pipeline configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detect::DetectorParams;
use crate::error::{Error, Result};

/// Lesion type. Discriminants double as indices into probability vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LesionClass {
    #[serde(rename = "HCC")]
    Hcc = 0,
    #[serde(rename = "ICC")]
    Icc = 1,
    #[serde(rename = "Metastasis")]
    Metastasis = 2,
}

impl LesionClass {
    pub const ALL: [LesionClass; 3] = [LesionClass::Hcc, LesionClass::Icc, LesionClass::Metastasis];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LesionClass::Hcc => "HCC",
            LesionClass::Icc => "ICC",
            LesionClass::Metastasis => "Metastasis",
        }
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LesionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hcc" | "0" => Ok(LesionClass::Hcc),
            "icc" | "1" => Ok(LesionClass::Icc),
            "metastasis" | "meta" | "2" => Ok(LesionClass::Metastasis),
            other => Err(Error::Ingestion(format!("unknown lesion class `{other}`"))),
        }
    }
}

/// MRI sequence type. Every study carries one volume per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SequenceKind {
    T1WI = 0,
    T2WI = 1,
    #[serde(rename = "T1WI_A")]
    T1WIA = 2,
    #[serde(rename = "T1WI_V")]
    T1WIV = 3,
    DWI = 4,
}

impl SequenceKind {
    pub const ALL: [SequenceKind; 5] = [
        SequenceKind::T1WI,
        SequenceKind::T2WI,
        SequenceKind::T1WIA,
        SequenceKind::T1WIV,
        SequenceKind::DWI,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::T1WI => "T1WI",
            SequenceKind::T2WI => "T2WI",
            SequenceKind::T1WIA => "T1WI_A",
            SequenceKind::T1WIV => "T1WI_V",
            SequenceKind::DWI => "DWI",
        }
    }
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SequenceKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Ingestion(format!("unknown sequence `{}`", s.trim())))
    }
}

/// Fixed-size table indexed by [`SequenceKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSequence<T>(pub [T; SequenceKind::COUNT]);

impl<T> PerSequence<T> {
    pub fn from_fn(mut f: impl FnMut(SequenceKind) -> T) -> Self {
        PerSequence(SequenceKind::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (SequenceKind, &T)> {
        SequenceKind::ALL.into_iter().zip(self.0.iter())
    }
}

impl<T> std::ops::Index<SequenceKind> for PerSequence<T> {
    type Output = T;
    fn index(&self, k: SequenceKind) -> &T {
        &self.0[k.index()]
    }
}

impl<T> std::ops::IndexMut<SequenceKind> for PerSequence<T> {
    fn index_mut(&mut self, k: SequenceKind) -> &mut T {
        &mut self.0[k.index()]
    }
}

/// Axis-aligned box with inclusive integer pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Box2D {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Box2D {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Box2D { x0, y0, x1, y1 }
    }

    pub fn is_valid(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Pixel at the box center, rounding half-up.
    pub fn center(&self) -> (i64, i64) {
        ((self.x0 + self.x1 + 1).div_euclid(2), (self.y0 + self.y1 + 1).div_euclid(2))
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 < width as i64 && self.y1 < height as i64
    }

    /// Intersection with the `[0, width-1] x [0, height-1]` rectangle, if non-empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<Box2D> {
        let b = Box2D {
            x0: self.x0.max(0),
            y0: self.y0.max(0),
            x1: self.x1.min(width as i64 - 1),
            y1: self.y1.min(height as i64 - 1),
        };
        b.is_valid().then_some(b)
    }
}

/// Ground-truth lesion box on one slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthBox {
    pub z: usize,
    #[serde(flatten)]
    pub bbox: Box2D,
}

/// Scalar volume, x-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::config("dims", "all dimensions must be positive"));
        }
        if voxels.len() != n {
            return Err(Error::config(
                "voxels",
                format!("expected {n} voxels, found {}", voxels.len()),
            ));
        }
        Ok(Volume { dims, spacing, voxels })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Volume {
            dims,
            spacing,
            voxels: vec![0.0; dims.iter().product()],
        }
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.offset(x, y, z)]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1];
        &self.voxels[z * n..(z + 1) * n]
    }
}

/// One patient: five co-registered volumes, ground truth and class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    pub volumes: BTreeMap<SequenceKind, Volume>,
    pub truth_class: LesionClass,
    pub truth_boxes: Vec<TruthBox>,
}

impl Study {
    /// Dims shared by all volumes. Panics on a study without volumes.
    pub fn dims(&self) -> [usize; 3] {
        self.volumes.values().next().expect("study without volumes").dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.volumes.values().next().expect("study without volumes").spacing
    }

    pub fn volume(&self, kind: SequenceKind) -> &Volume {
        &self.volumes[&kind]
    }

    /// Largest in-plane extent over all truth boxes, in millimetres.
    pub fn largest_lesion_mm(&self) -> f64 {
        let [sx, sy, _] = self.spacing();
        self.truth_boxes
            .iter()
            .map(|t| (t.bbox.width() as f64 * sx).max(t.bbox.height() as f64 * sy))
            .fold(0.0, f64::max)
    }
}

/// Lists every invariant violation of `s`; empty iff the study is well formed.
pub fn validate_study(s: &Study) -> Vec<String> {
    let mut out = Vec::new();
    if s.id.trim().is_empty() {
        out.push("empty study id".to_string());
    }
    for kind in SequenceKind::ALL {
        if !s.volumes.contains_key(&kind) {
            out.push(format!("missing sequence {kind}"));
        }
    }
    let mut dims = None;
    for (kind, v) in &s.volumes {
        if v.voxels.len() != v.dims.iter().product::<usize>() {
            out.push(format!("voxel count mismatch in {kind}"));
        }
        if v.dims.iter().any(|&d| d == 0) {
            out.push(format!("zero dimension in {kind}"));
        }
        if v.voxels.iter().any(|x| !x.is_finite()) {
            out.push(format!("non-finite intensity in {kind}"));
        }
        match dims {
            None => dims = Some(v.dims),
            Some(d) if d != v.dims => out.push(format!("dims mismatch in {kind}")),
            _ => {}
        }
    }
    if s.truth_boxes.is_empty() {
        out.push("no truth boxes".to_string());
    }
    for t in &s.truth_boxes {
        if !t.bbox.is_valid() {
            out.push("degenerate box".to_string());
        } else if let Some([nx, ny, nz]) = dims {
            if t.z >= nz || !t.bbox.within(nx, ny) {
                out.push(format!("truth box out of bounds on slice {}", t.z));
            }
        }
    }
    out
}

/// Classifier optimisation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
        }
    }
}

/// Which positive studies count as correctly localized in LROC analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationRule {
    /// At least one key ROI center falls inside a truth box on the same slice.
    CenterInTruthBox,
    /// Any study with at least one key ROI counts as localized.
    AnyRoi,
}

/// Every tunable constant of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Boxes with confidence strictly below this are dropped before fusion.
    pub roi_conf_threshold: f64,
    /// Fraction of fused per-slice ROIs passed on to the classifier.
    pub keyroi_keep_fraction: f64,
    pub dropout_rate: f64,
    pub mc_passes: usize,
    pub folds: usize,
    /// Validation share of the whole cohort, carved from the non-test part of each fold.
    pub val_fraction: f64,
    pub detector: PerSequence<DetectorParams>,
    pub train: TrainParams,
    pub localization_rule: LocalizationRule,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 2021,
            roi_conf_threshold: 0.5,
            keyroi_keep_fraction: 0.48,
            dropout_rate: 0.2,
            mc_passes: 100,
            folds: 5,
            val_fraction: 0.1,
            detector: PerSequence::from_fn(|_| DetectorParams::default()),
            train: TrainParams::default(),
            localization_rule: LocalizationRule::CenterInTruthBox,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |field: &str, v: f64, allow_zero: bool| {
            let ok = v.is_finite() && v <= 1.0 && if allow_zero { v >= 0.0 } else { v > 0.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} outside the allowed fraction range")))
            }
        };
        unit("roi.conf_threshold", self.roi_conf_threshold, true)?;
        unit("roi.keep_fraction", self.keyroi_keep_fraction, false)?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("classifier.dropout_rate", "must lie in [0, 1)"));
        }
        if self.mc_passes < 1 {
            return Err(Error::config("classifier.mc_passes", "must be at least 1"));
        }
        if self.folds < 2 {
            return Err(Error::config("eval.folds", "must be at least 2"));
        }
        let test_fraction = 1.0 / self.folds as f64;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0 - test_fraction) {
            return Err(Error::config(
                "eval.val_fraction",
                "must be positive and leave room for training data",
            ));
        }
        for (kind, p) in self.detector.iter() {
            p.validate()
                .map_err(|e| prefix_field(e, &format!("detector.{kind}")))?;
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::config("classifier.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::config("classifier.momentum", "must lie in [0, 1)"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("classifier.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, reason } => Error::config(format!("{prefix}.{field}"), reason),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_study() -> Study {
        let dims = [4, 4, 2];
        let volumes = SequenceKind::ALL
            .into_iter()
            .map(|k| (k, Volume::zeros(dims, [1.0, 1.0, 1.0])))
            .collect();
        Study {
            id: "s".into(),
            volumes,
            truth_class: LesionClass::Hcc,
            truth_boxes: vec![TruthBox { z: 1, bbox: Box2D::new(0, 0, 1, 1) }],
        }
    }

    #[test]
    fn well_formed_study_has_no_violations() {
        assert!(validate_study(&tiny_study()).is_empty());
    }

    #[test]
    fn missing_dwi_is_reported() {
        let mut s = tiny_study();
        s.volumes.remove(&SequenceKind::DWI);
        assert_eq!(validate_study(&s), vec!["missing sequence DWI".to_string()]);
    }

    #[test]
    fn degenerate_box_is_reported() {
        let mut s = tiny_study();
        s.truth_boxes[0].bbox = Box2D::new(3, 0, 1, 1);
        assert_eq!(validate_study(&s), vec!["degenerate box".to_string()]);
    }

    #[test]
    fn out_of_bounds_and_empty_truth() {
        let mut s = tiny_study();
        s.truth_boxes[0].z = 2;
        assert_eq!(validate_study(&s).len(), 1);
        s.truth_boxes.clear();
        assert_eq!(validate_study(&s), vec!["no truth boxes".to_string()]);
    }

    #[test]
    fn class_indices_are_stable() {
        for (i, c) in LesionClass::ALL.into_iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(LesionClass::from_index(i), Some(c));
            assert_eq!(c.name().parse::<LesionClass>().unwrap(), c);
        }
        assert_eq!("Meta".parse::<LesionClass>().unwrap(), LesionClass::Metastasis);
    }

    #[test]
    fn box_geometry() {
        let b = Box2D::new(1, 2, 4, 2);
        assert_eq!((b.width(), b.height(), b.area()), (4, 1, 4));
        assert_eq!(b.center(), (3, 2));
        assert_eq!(Box2D::new(-3, -1, 2, 9).clip(5, 5), Some(Box2D::new(0, 0, 2, 4)));
        assert_eq!(Box2D::new(6, 6, 8, 8).clip(5, 5), None);
    }

    #[test]
    fn default_config_is_valid() {
        PipelineConfig::default().validate().unwrap();
        let mut c = PipelineConfig::default();
        c.folds = 1;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "eval.folds"));
    }
}
