//! Per-sequence 2D lesion candidate detection.
//!
//! [`DogDetector`] is the reference implementation: a blended
//! difference-of-Gaussians response, thresholded and split into 8-connected
//! components. [`ReplayDetector`] serves precomputed boxes from a CSV file so
//! externally trained detectors can drive the rest of the pipeline.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{difference_of_gaussians, Image2D};
use crate::model::{Box2D, PerSequence, SequenceKind, Study};

/// Detector candidate on one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: Box2D,
    pub confidence: f64,
    pub source: SequenceKind,
    pub z: usize,
}

impl ScoredBox {
    fn order_key(&self) -> (usize, SequenceKind, i64, i64, i64, i64) {
        (self.z, self.source, self.bbox.x0, self.bbox.y0, self.bbox.x1, self.bbox.y1)
    }
}

/// Sorts boxes into the canonical `(z, source, x0, y0)` order.
pub fn sort_boxes(boxes: &mut [ScoredBox]) {
    boxes.sort_by(|a, b| {
        a.order_key()
            .cmp(&b.order_key())
            .then(a.confidence.total_cmp(&b.confidence))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub dog_sigma_small: f64,
    pub dog_sigma_large: f64,
    /// Threshold in units of the slice's robust response noise scale.
    pub response_threshold: f64,
    /// Lower bound on the noise scale, so noise-free slices still get a finite threshold.
    pub noise_floor: f64,
    pub min_area: usize,
    /// `(primary, secondary)` blend weights; only used when a secondary channel is present.
    pub channel_weights: (f64, f64),
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            dog_sigma_small: 1.5,
            dog_sigma_large: 5.0,
            response_threshold: 6.0,
            noise_floor: 0.005,
            min_area: 4,
            channel_weights: (0.7, 0.3),
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dog_sigma_small > 0.0 && self.dog_sigma_small < self.dog_sigma_large) {
            return Err(Error::config("sigma_small", "need 0 < sigma_small < sigma_large"));
        }
        if !self.dog_sigma_large.is_finite() {
            return Err(Error::config("sigma_large", "must be finite"));
        }
        if self.response_threshold.is_nan() {
            return Err(Error::config("response_threshold", "must not be NaN"));
        }
        if !(self.noise_floor > 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::config("noise_floor", "must be positive"));
        }
        if self.min_area < 1 {
            return Err(Error::config("min_area", "must be at least 1"));
        }
        let (a, b) = self.channel_weights;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-9 {
            return Err(Error::config("channel_weights", "must be nonnegative and sum to 1"));
        }
        Ok(())
    }
}

/// One slice as seen by a single-sequence detector.
#[derive(Debug, Clone)]
pub struct DetectorInput<'a> {
    pub primary: &'a Image2D,
    /// Co-located T2WI slice; absent for the T2WI detector itself.
    pub secondary: Option<&'a Image2D>,
    pub sequence: SequenceKind,
    pub z: usize,
}

/// Robust noise scale of a response map: `1.4826 * MAD`.
fn noise_scale(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let median = *v.select_nth_unstable_by(mid, f64::total_cmp).1;
    v.iter_mut().for_each(|x| *x = (*x - median).abs());
    let mad = *v.select_nth_unstable_by(mid, f64::total_cmp).1;
    1.4826 * mad
}

/// Thresholds `response` and returns one box per 8-connected component.
fn boxes_from_response(
    response: &Image2D,
    params: &DetectorParams,
    sequence: SequenceKind,
    z: usize,
) -> Vec<ScoredBox> {
    let global_max = response.max();
    if !(global_max > 0.0) || params.response_threshold == f64::INFINITY {
        return Vec::new();
    }
    let threshold = params.response_threshold * noise_scale(&response.pixels).max(params.noise_floor);
    let (w, h) = (response.width, response.height);
    let mask: Vec<bool> = response.pixels.iter().map(|&r| r > threshold).collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let mut area = 0;
        let mut peak = f64::NEG_INFINITY;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            area += 1;
            peak = peak.max(response.pixels[i]);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if area >= params.min_area {
            out.push(ScoredBox {
                bbox: Box2D::new(x0 as i64, y0 as i64, x1 as i64, y1 as i64),
                confidence: (peak / global_max).clamp(0.0, 1.0),
                source: sequence,
                z,
            });
        }
    }
    out
}

fn blend(primary: &Image2D, secondary: Option<&Image2D>, weights: (f64, f64)) -> Image2D {
    match secondary {
        None => primary.clone(),
        Some(s) => Image2D::new(
            primary.width,
            primary.height,
            primary
                .pixels
                .iter()
                .zip(&s.pixels)
                .map(|(p, q)| weights.0 * p + weights.1 * q)
                .collect(),
        ),
    }
}

/// Reference detector on a single slice.
pub fn detect_slice(input: &DetectorInput<'_>, params: &DetectorParams) -> Result<Vec<ScoredBox>> {
    params.validate()?;
    if let Some(s) = input.secondary {
        if !s.same_dims(input.primary) {
            return Err(Error::config("secondary", "secondary slice dims differ from primary"));
        }
    }
    let dog = |img: &Image2D| difference_of_gaussians(img, params.dog_sigma_small, params.dog_sigma_large);
    let response = blend(&dog(input.primary), input.secondary.map(dog).as_ref(), params.channel_weights);
    let mut boxes = boxes_from_response(&response, params, input.sequence, input.z);
    sort_boxes(&mut boxes);
    Ok(boxes)
}

fn slice_image(study: &Study, kind: SequenceKind, z: usize) -> Image2D {
    let [nx, ny, _] = study.dims();
    Image2D::from_f32(nx, ny, study.volume(kind).slice(z))
}

/// Runs the reference detector over every sequence and slice of `study`.
///
/// Non-T2WI detectors receive the co-located T2WI slice as a second channel.
/// DoG is linear, so the blended response is computed from per-channel DoG maps.
pub fn detect_study(study: &Study, params: &PerSequence<DetectorParams>) -> Result<Vec<ScoredBox>> {
    for (kind, p) in params.iter() {
        p.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::config(format!("detector.{kind}.{field}"), reason),
            e => e,
        })?;
    }
    let nz = study.dims()[2];
    let per_slice = crate::par::map_indices(nz, |z| {
        let t2 = slice_image(study, SequenceKind::T2WI, z);
        let mut t2_dogs: Vec<((f64, f64), Image2D)> = Vec::new();
        let mut boxes = Vec::new();
        for kind in SequenceKind::ALL {
            let p = &params[kind];
            let sig = (p.dog_sigma_small, p.dog_sigma_large);
            let primary = difference_of_gaussians(&slice_image(study, kind, z), sig.0, sig.1);
            let response = if kind == SequenceKind::T2WI {
                primary
            } else {
                let secondary = match t2_dogs.iter().find(|(s, _)| *s == sig) {
                    Some((_, d)) => d,
                    None => {
                        t2_dogs.push((sig, difference_of_gaussians(&t2, sig.0, sig.1)));
                        &t2_dogs.last().unwrap().1
                    }
                };
                blend(&primary, Some(secondary), p.channel_weights)
            };
            boxes.extend(boxes_from_response(&response, p, kind, z));
        }
        boxes
    });
    let mut boxes: Vec<ScoredBox> = per_slice.into_iter().flatten().collect();
    sort_boxes(&mut boxes);
    Ok(boxes)
}

/// Anything that turns a study into scored candidate boxes.
pub trait Detector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, study: &Study) -> Result<Vec<ScoredBox>>;
}

#[derive(Debug, Clone)]
pub struct DogDetector {
    pub params: PerSequence<DetectorParams>,
}

impl Detector for DogDetector {
    fn name(&self) -> &str {
        "dog"
    }

    fn detect(&self, study: &Study) -> Result<Vec<ScoredBox>> {
        detect_study(study, &self.params)
    }
}

/// Row of the replay / detections CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub study_id: String,
    pub sequence: SequenceKind,
    pub z: usize,
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub confidence: f64,
}

impl BoxRecord {
    pub const HEADER: [&'static str; 8] = ["study_id", "sequence", "z", "x0", "y0", "x1", "y1", "confidence"];

    pub fn new(study_id: &str, b: &ScoredBox) -> Self {
        BoxRecord {
            study_id: study_id.to_string(),
            sequence: b.source,
            z: b.z,
            x0: b.bbox.x0,
            y0: b.bbox.y0,
            x1: b.bbox.x1,
            y1: b.bbox.y1,
            confidence: b.confidence,
        }
    }

    pub fn scored_box(&self) -> ScoredBox {
        ScoredBox {
            bbox: Box2D::new(self.x0, self.y0, self.x1, self.y1),
            confidence: self.confidence,
            source: self.sequence,
            z: self.z,
        }
    }
}

/// Serves boxes produced elsewhere, keyed by study id.
#[derive(Debug, Clone, Default)]
pub struct ReplayDetector {
    boxes: BTreeMap<String, Vec<ScoredBox>>,
}

impl ReplayDetector {
    pub fn from_records(records: impl IntoIterator<Item = BoxRecord>) -> Result<Self> {
        let mut boxes: BTreeMap<String, Vec<ScoredBox>> = BTreeMap::new();
        for r in records {
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(Error::Ingestion(format!(
                    "study {}: confidence {} outside [0, 1]",
                    r.study_id, r.confidence
                )));
            }
            let b = r.scored_box();
            if !b.bbox.is_valid() {
                return Err(Error::Ingestion(format!("study {}: degenerate box", r.study_id)));
            }
            boxes.entry(r.study_id).or_default().push(b);
        }
        for v in boxes.values_mut() {
            sort_boxes(v);
        }
        Ok(ReplayDetector { boxes })
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(crate::io::read_csv::<BoxRecord>(path.as_ref())?)
    }

    /// Stored boxes of one study, unchecked against its volume.
    pub fn boxes_for(&self, study_id: &str) -> &[ScoredBox] {
        self.boxes.get(study_id).map_or(&[], Vec::as_slice)
    }
}

impl Detector for ReplayDetector {
    fn name(&self) -> &str {
        "replay"
    }

    fn detect(&self, study: &Study) -> Result<Vec<ScoredBox>> {
        let [nx, ny, nz] = study.dims();
        let boxes = self.boxes.get(&study.id).cloned().unwrap_or_default();
        if let Some(b) = boxes.iter().find(|b| b.z >= nz || !b.bbox.within(nx, ny)) {
            return Err(Error::Ingestion(format!(
                "study {}: replayed box {:?} on slice {} outside the volume",
                study.id, b.bbox, b.z
            )));
        }
        Ok(boxes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(img: &mut Image2D, cx: f64, cy: f64, r: f64, v: f64) {
        for y in 0..img.height {
            for x in 0..img.width {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    img.set(x, y, v);
                }
            }
        }
    }

    fn input(img: &Image2D) -> DetectorInput<'_> {
        DetectorInput { primary: img, secondary: None, sequence: SequenceKind::T2WI, z: 0 }
    }

    #[test]
    fn zero_slice_has_no_boxes() {
        let img = Image2D::filled(32, 32, 0.0);
        assert!(detect_slice(&input(&img), &DetectorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn single_disk_gives_one_full_confidence_box() {
        let mut img = Image2D::filled(48, 48, 0.2);
        disk(&mut img, 20.0, 25.0, 5.0, 0.6);
        let boxes = detect_slice(&input(&img), &DetectorParams::default()).unwrap();
        assert_eq!(boxes.len(), 1);
        assert!(boxes[0].bbox.contains(20, 25));
        assert_eq!(boxes[0].confidence, 1.0);
    }

    #[test]
    fn two_disks_two_boxes() {
        let mut img = Image2D::filled(64, 48, 0.2);
        disk(&mut img, 14.0, 20.0, 4.0, 0.7);
        disk(&mut img, 46.0, 28.0, 6.0, 0.5);
        let boxes = detect_slice(&input(&img), &DetectorParams::default()).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(boxes.iter().any(|b| b.bbox.contains(14, 20)));
        assert!(boxes.iter().any(|b| b.bbox.contains(46, 28)));
        assert!(boxes.iter().all(|b| (0.0..=1.0).contains(&b.confidence)));
    }

    #[test]
    fn infinite_threshold_and_bad_sigmas() {
        let mut img = Image2D::filled(32, 32, 0.2);
        disk(&mut img, 16.0, 16.0, 4.0, 0.8);
        let p = DetectorParams { response_threshold: f64::INFINITY, ..Default::default() };
        assert!(detect_slice(&input(&img), &p).unwrap().is_empty());
        let p = DetectorParams { dog_sigma_small: 4.0, dog_sigma_large: 2.0, ..Default::default() };
        assert!(matches!(detect_slice(&input(&img), &p), Err(Error::Config { .. })));
    }

    #[test]
    fn secondary_dims_must_match() {
        let a = Image2D::filled(8, 8, 0.0);
        let b = Image2D::filled(9, 8, 0.0);
        let inp = DetectorInput { primary: &a, secondary: Some(&b), sequence: SequenceKind::DWI, z: 0 };
        assert!(detect_slice(&inp, &DetectorParams::default()).is_err());
    }

    #[test]
    fn replay_rejects_bad_confidence() {
        let rec = BoxRecord {
            study_id: "a".into(),
            sequence: SequenceKind::DWI,
            z: 0,
            x0: 0,
            y0: 0,
            x1: 1,
            y1: 1,
            confidence: 1.5,
        };
        assert!(ReplayDetector::from_records([rec]).is_err());
    }
}
