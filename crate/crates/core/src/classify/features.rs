//! Hand-crafted ROI descriptors fed to the classifier.
//!
//! Layout (32 values): for each sequence in `SequenceKind::ALL` order, six
//! statistics `[mean, std, min, max, contrast, ring_std]` of the ROI interior
//! and its surrounding ring, followed by the ROI area as a fraction of the
//! slice and the slice position `z / (nz - 1)`.

use serde::{Deserialize, Serialize};

use crate::model::{Box2D, SequenceKind, Study};

pub const FEATURES_PER_SEQUENCE: usize = 6;
pub const FEATURE_LEN: usize = SequenceKind::COUNT * FEATURES_PER_SEQUENCE + 2;
/// Width of the ring around the ROI used for contrast statistics.
pub const RING_WIDTH: i64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiFeatures(pub Vec<f64>);

impl RoiFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Default)]
struct Stats {
    n: usize,
    sum: f64,
    sum_sq: f64,
    min: f64,
    max: f64,
}

impl Stats {
    fn push(&mut self, v: f64) {
        if self.n == 0 {
            self.min = v;
            self.max = v;
        }
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn std(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0).sqrt()
    }
}

/// Descriptor of `bbox` on slice `z` of `study`. The box is clipped to the slice.
pub fn extract_features(study: &Study, z: usize, bbox: &Box2D) -> RoiFeatures {
    let [nx, ny, nz] = study.dims();
    let inner = bbox.clip(nx, ny).unwrap_or(Box2D::new(0, 0, 0, 0));
    let outer = Box2D::new(
        inner.x0 - RING_WIDTH,
        inner.y0 - RING_WIDTH,
        inner.x1 + RING_WIDTH,
        inner.y1 + RING_WIDTH,
    )
    .clip(nx, ny)
    .expect("ring box overlaps the slice");

    let mut out = Vec::with_capacity(FEATURE_LEN);
    for kind in SequenceKind::ALL {
        let slice = study.volume(kind).slice(z);
        let mut interior = Stats::default();
        let mut ring = Stats::default();
        for y in outer.y0..=outer.y1 {
            for x in outer.x0..=outer.x1 {
                let v = slice[y as usize * nx + x as usize] as f64;
                if inner.contains(x, y) {
                    interior.push(v);
                } else {
                    ring.push(v);
                }
            }
        }
        let (ring_mean, ring_std) = if ring.n == 0 {
            (interior.mean(), interior.std())
        } else {
            (ring.mean(), ring.std())
        };
        out.extend([
            interior.mean(),
            interior.std(),
            interior.min,
            interior.max,
            interior.mean() - ring_mean,
            ring_std,
        ]);
    }
    out.push(inner.area() as f64 / (nx * ny) as f64);
    out.push(if nz > 1 { z as f64 / (nz - 1) as f64 } else { 0.0 });
    RoiFeatures(out)
}
