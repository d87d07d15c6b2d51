//! Browser demo bindings.
//!
//! Three interactive views over the core crate, each returning JSON for the
//! page script: a phantom slice with detector boxes and the fused key ROI, the
//! per-pixel vote map behind that fusion, and an LROC explorer on simulated
//! scores. The plain Rust functions are usable (and tested) natively; the
//! `wasm_bindgen` wrappers only marshal strings.

use lesion_cad::detect::{detect_study, DetectorParams, ScoredBox};
use lesion_cad::eval::{lroc_curve, sensitivity_at_specificity, LrocEntry};
use lesion_cad::fuse::{filter_boxes, fuse_slice, KeyRoi};
use lesion_cad::model::{Box2D, LesionClass, PerSequence, SequenceKind, Study};
use lesion_cad::rng::stage_rng;
use lesion_cad::synth::{generate_study, GenSpec};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Phantom edge length of the demo; small enough to stay interactive.
const DEMO_DIMS: [usize; 3] = [64, 64, 16];

#[derive(Serialize)]
struct BoxJson {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
    confidence: f64,
    sequence: &'static str,
}

impl BoxJson {
    fn new(bbox: Box2D, confidence: f64, sequence: &'static str) -> Self {
        BoxJson { x0: bbox.x0, y0: bbox.y0, x1: bbox.x1, y1: bbox.y1, confidence, sequence }
    }
}

#[derive(Serialize)]
pub struct SliceView {
    width: usize,
    height: usize,
    depth: usize,
    z: usize,
    class: &'static str,
    sequence: &'static str,
    /// Row-major intensities in `[0, 1]`.
    pixels: Vec<f32>,
    truth: Vec<BoxJson>,
    /// Every candidate on the slice, before the confidence filter.
    boxes: Vec<BoxJson>,
    kept: usize,
    fused: Option<BoxJson>,
    contributors: usize,
    /// Row-major vote counts of the kept boxes.
    votes: Vec<u32>,
    max_vote: u32,
}

/// A generated study plus its detector output, kept alive between slider moves.
#[wasm_bindgen]
pub struct Phantom {
    study: Study,
    boxes: Vec<ScoredBox>,
}

impl Phantom {
    pub fn generate(class: LesionClass, seed: u64, noise_std: f64) -> Result<Phantom, String> {
        let mut n_per_class = [0; 3];
        n_per_class[class.index()] = 1;
        let spec = GenSpec { n_per_class, dims: DEMO_DIMS, noise_std, seed, ..GenSpec::default() };
        spec.validate().map_err(|e| e.to_string())?;
        let study = generate_study(&spec, 0).map_err(|e| e.to_string())?;
        let boxes = detect_study(&study, &PerSequence::from_fn(|_| DetectorParams::default())).map_err(|e| e.to_string())?;
        Ok(Phantom { study, boxes })
    }

    /// Slice through the largest ground-truth box.
    pub fn lesion_slice(&self) -> usize {
        self.study.truth_boxes.iter().max_by_key(|t| t.bbox.area()).map_or(0, |t| t.z)
    }

    pub fn view(&self, z: usize, sequence: SequenceKind, conf_threshold: f64) -> SliceView {
        let [w, h, d] = self.study.dims();
        let z = z.min(d - 1);
        let on_slice: Vec<ScoredBox> = self.boxes.iter().copied().filter(|b| b.z == z).collect();
        let kept = filter_boxes(&on_slice, conf_threshold);
        let mut votes = vec![0u32; w * h];
        for b in &kept {
            for y in b.bbox.y0..=b.bbox.y1 {
                for x in b.bbox.x0..=b.bbox.x1 {
                    votes[y as usize * w + x as usize] += 1;
                }
            }
        }
        let fused: Option<KeyRoi> = fuse_slice(&kept, w, h);
        SliceView {
            width: w,
            height: h,
            depth: d,
            z,
            class: self.study.truth_class.name(),
            sequence: sequence.name(),
            pixels: self.study.volume(sequence).slice(z).to_vec(),
            truth: self
                .study
                .truth_boxes
                .iter()
                .filter(|t| t.z == z)
                .map(|t| BoxJson::new(t.bbox, 1.0, "truth"))
                .collect(),
            boxes: on_slice.iter().map(|b| BoxJson::new(b.bbox, b.confidence, b.source.name())).collect(),
            kept: kept.len(),
            contributors: fused.map_or(0, |r| r.contributor_count),
            fused: fused.map(|r| BoxJson::new(r.bbox, r.confidence, "fused")),
            max_vote: votes.iter().copied().max().unwrap_or(0),
            votes,
        }
    }
}

#[wasm_bindgen]
impl Phantom {
    /// `class`: 0 HCC, 1 ICC, 2 metastasis.
    #[wasm_bindgen(constructor)]
    pub fn new(class: u32, seed: u32, noise_std: f64) -> Result<Phantom, JsError> {
        let class = LesionClass::from_index(class as usize).ok_or_else(|| JsError::new("class must be 0, 1 or 2"))?;
        Phantom::generate(class, seed as u64, noise_std).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = lesionSlice)]
    pub fn lesion_slice_js(&self) -> usize {
        self.lesion_slice()
    }

    /// JSON [`SliceView`]; `sequence` is 0..5 in T1WI, T2WI, T1WI_A, T1WI_V, DWI order.
    #[wasm_bindgen(js_name = slice)]
    pub fn slice_js(&self, z: usize, sequence: u32, conf_threshold: f64) -> Result<String, JsError> {
        let kind = *SequenceKind::ALL.get(sequence as usize).ok_or_else(|| JsError::new("sequence must be 0..5"))?;
        serde_json::to_string(&self.view(z, kind, conf_threshold)).map_err(|e| JsError::new(&e.to_string()))
    }
}

#[derive(Serialize)]
pub struct LrocView {
    points: Vec<[f64; 2]>,
    area: f64,
    max_sensitivity: f64,
    sens_at_80_spec: f64,
}

/// LROC of simulated HCC scores: positives score `N(separation, 1)`, negatives
/// `N(0, 1)`, and a `miss_fraction` of positives are never localized.
pub fn lroc_explorer(n_pos: usize, n_neg: usize, separation: f64, miss_fraction: f64, seed: u64) -> Result<LrocView, String> {
    let mut rng = stage_rng(seed, "demo", "lroc");
    let normal = Normal::new(0.0, 1.0).map_err(|e| e.to_string())?;
    let mut entries = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos + n_neg {
        let positive = i < n_pos;
        let missed = positive && rng.random::<f64>() < miss_fraction;
        let score = normal.sample(&mut rng) + if positive { separation } else { 0.0 };
        entries.push(LrocEntry { score: (!missed).then_some(score), positive, localized: !missed });
    }
    let curve = lroc_curve(&entries).map_err(|e| e.to_string())?;
    let sens = sensitivity_at_specificity(&curve, 0.8).map_err(|e| e.to_string())?;
    Ok(LrocView {
        points: curve.points.iter().map(|p| [p.fpf, p.tpf]).collect(),
        area: curve.area,
        max_sensitivity: curve.max_sensitivity,
        sens_at_80_spec: sens,
    })
}

#[wasm_bindgen(js_name = lrocExplorer)]
pub fn lroc_explorer_js(n_pos: u32, n_neg: u32, separation: f64, miss_fraction: f64, seed: u32) -> Result<String, JsError> {
    let view = lroc_explorer(n_pos as usize, n_neg as usize, separation, miss_fraction, seed as u64)
        .map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}
