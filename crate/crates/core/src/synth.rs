//! Synthetic multi-sequence liver phantoms with ellipsoidal lesions and
//! ground-truth boxes.
//!
//! Intensities are unitless in `[0, 1]`. The background is a broad radial
//! dome standing in for the liver; each lesion adds a per-sequence offset
//! drawn from its class signature; Gaussian noise is added independently per
//! sequence. Signature defaults are modelling choices with textbook-flavoured
//! contrasts, not measured values.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Box2D, LesionClass, PerSequence, SequenceKind, Study, TruthBox, Volume};
use crate::rng::stage_rng;

/// Per-class lesion appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    /// `(mean, std)` of the lesion intensity offset relative to background.
    pub offsets: PerSequence<(f64, f64)>,
    /// Inclusive range of lesion counts per study.
    pub lesion_count: (usize, usize),
    /// In-plane radius range in millimetres.
    pub radius_mm: (f64, f64),
}

impl ClassSignature {
    pub fn default_for(class: LesionClass) -> Self {
        use SequenceKind::*;
        let table = |v: [(SequenceKind, f64); 5]| {
            let mut offs = PerSequence::from_fn(|_| (0.0, 0.04));
            for (k, m) in v {
                offs[k].0 = m;
            }
            offs
        };
        match class {
            // arterial enhancement, venous washout
            LesionClass::Hcc => ClassSignature {
                offsets: table([(T1WI, -0.10), (T2WI, 0.15), (T1WIA, 0.35), (T1WIV, -0.15), (DWI, 0.15)]),
                lesion_count: (1, 1),
                radius_mm: (7.0, 20.0),
            },
            // delayed-type enhancement
            LesionClass::Icc => ClassSignature {
                offsets: table([(T1WI, -0.10), (T2WI, 0.20), (T1WIA, 0.05), (T1WIV, 0.25), (DWI, 0.15)]),
                lesion_count: (1, 2),
                radius_mm: (8.0, 22.0),
            },
            // T2/DWI bright, several smaller lesions
            LesionClass::Metastasis => ClassSignature {
                offsets: table([(T1WI, -0.10), (T2WI, 0.30), (T1WIA, 0.10), (T1WIV, 0.0), (DWI, 0.35)]),
                lesion_count: (2, 4),
                radius_mm: (4.0, 13.0),
            },
        }
    }

    fn validate(&self, class: LesionClass) -> Result<()> {
        let field = |f: &str| format!("gen.{class}.{f}");
        for (k, (m, s)) in self.offsets.iter() {
            if !m.is_finite() || !s.is_finite() || *s < 0.0 {
                return Err(Error::config(field(&format!("{k}")), "offset must be finite with std >= 0"));
            }
        }
        let (lo, hi) = self.lesion_count;
        if lo < 1 || hi < lo {
            return Err(Error::config(field("count"), "need 1 <= min <= max"));
        }
        let (rlo, rhi) = self.radius_mm;
        if !(rlo > 0.0 && rhi >= rlo && rhi.is_finite()) {
            return Err(Error::config(field("radius"), "need 0 < min <= max"));
        }
        Ok(())
    }
}

/// Cohort generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    /// Study count per class, indexed by [`LesionClass::index`].
    pub n_per_class: [usize; 3],
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub noise_std: f64,
    pub background_level: f64,
    pub signatures: [ClassSignature; 3],
    pub seed: u64,
}

/// Noise level of the default cohort.
pub const MODERATE_NOISE_STD: f64 = 0.05;
/// Noise level at which the reference detector starts missing faint studies.
pub const HARD_NOISE_STD: f64 = 0.15;

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_per_class: [100, 40, 55],
            dims: [64, 64, 24],
            spacing: [1.0, 1.0, 4.0],
            noise_std: MODERATE_NOISE_STD,
            background_level: 0.4,
            signatures: LesionClass::ALL.map(ClassSignature::default_for),
            seed: 2021,
        }
    }
}

impl GenSpec {
    pub fn total(&self) -> usize {
        self.n_per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::config("gen.dims", "all dimensions must be positive"));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("gen.spacing", "must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", format!("must be >= 0, got {}", self.noise_std)));
        }
        if !(0.0..=1.0).contains(&self.background_level) {
            return Err(Error::config("background_level", "must lie in [0, 1]"));
        }
        for c in LesionClass::ALL {
            self.signatures[c.index()].validate(c)?;
        }
        Ok(())
    }

    /// Class of the `index`-th study: classes occupy consecutive index ranges.
    pub fn class_of(&self, index: usize) -> Option<LesionClass> {
        let mut end = 0;
        for c in LesionClass::ALL {
            end += self.n_per_class[c.index()];
            if index < end {
                return Some(c);
            }
        }
        None
    }

    pub fn study_id(index: usize) -> String {
        format!("S{index:04}")
    }
}

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    #[inline]
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let p = [x, y, z];
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.radii[i]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    /// Inclusive voxel index range along `axis` that can hold members, clipped to `[0, n-1]`.
    fn span(&self, axis: usize, n: usize) -> Option<(usize, usize)> {
        let lo = (self.center[axis] - self.radii[axis]).ceil().max(0.0);
        let hi = (self.center[axis] + self.radii[axis]).floor().min(n as f64 - 1.0);
        (lo <= hi).then(|| (lo as usize, hi as usize))
    }
}

/// Tight per-slice boxes of the ellipsoid's voxel membership, clipped to the volume.
pub fn truth_boxes_for_lesion(e: &Ellipsoid, dims: [usize; 3]) -> Vec<TruthBox> {
    let (Some((x_lo, x_hi)), Some((y_lo, y_hi)), Some((z_lo, z_hi))) =
        (e.span(0, dims[0]), e.span(1, dims[1]), e.span(2, dims[2]))
    else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for z in z_lo..=z_hi {
        let mut bbox: Option<Box2D> = None;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if e.contains(x as f64, y as f64, z as f64) {
                    let (x, y) = (x as i64, y as i64);
                    bbox = Some(match bbox {
                        None => Box2D::new(x, y, x, y),
                        Some(b) => Box2D::new(b.x0.min(x), b.y0.min(y), b.x1.max(x), b.y1.max(y)),
                    });
                }
            }
        }
        if let Some(bbox) = bbox {
            out.push(TruthBox { z, bbox });
        }
    }
    out
}

struct Lesion {
    shape: Ellipsoid,
    offsets: [f64; SequenceKind::COUNT],
}

fn sample_lesions(spec: &GenSpec, class: LesionClass, rng: &mut impl Rng) -> Vec<Lesion> {
    let sig = &spec.signatures[class.index()];
    let count = rng.random_range(sig.lesion_count.0..=sig.lesion_count.1);
    (0..count)
        .map(|_| {
            let r = rng.random_range(sig.radius_mm.0..=sig.radius_mm.1);
            let radii_mm = [r, r * rng.random_range(0.8..1.2), r * rng.random_range(0.8..1.2)];
            let radii: [f64; 3] = std::array::from_fn(|i| (radii_mm[i] / spec.spacing[i]).max(0.5));
            // integer centre keeps at least the centre voxel inside the lesion
            let center: [f64; 3] = std::array::from_fn(|i| {
                let n = spec.dims[i] as f64;
                let margin = if i < 2 { radii[i].ceil() + 1.0 } else { 1.0 };
                let (lo, hi) = (margin, n - 1.0 - margin);
                if lo < hi {
                    rng.random_range(lo..=hi).round()
                } else {
                    ((n - 1.0) / 2.0).floor()
                }
            });
            let offsets = std::array::from_fn(|k| {
                let (m, s) = sig.offsets.0[k];
                m + s * rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            Lesion { shape: Ellipsoid { center, radii }, offsets }
        })
        .collect()
}

fn background(spec: &GenSpec, x: usize, y: usize) -> f64 {
    let [nx, ny, _] = spec.dims;
    let dx = (x as f64 - (nx as f64 - 1.0) / 2.0) / (0.35 * nx as f64);
    let dy = (y as f64 - (ny as f64 - 1.0) / 2.0) / (0.30 * ny as f64);
    spec.background_level * (0.5 + 0.5 * (-0.5 * (dx * dx + dy * dy)).exp())
}

/// Generates the `index`-th study of the cohort described by `spec`.
pub fn generate_study(spec: &GenSpec, index: usize) -> Result<Study> {
    let class = spec
        .class_of(index)
        .ok_or_else(|| Error::config("index", format!("study {index} beyond cohort size")))?;
    let id = GenSpec::study_id(index);
    let mut rng = stage_rng(spec.seed, &id, "lesions");
    let lesions = sample_lesions(spec, class, &mut rng);
    let truth_boxes = lesions
        .iter()
        .flat_map(|l| truth_boxes_for_lesion(&l.shape, spec.dims))
        .collect();

    let [nx, ny, nz] = spec.dims;
    let mut base = vec![0.0f64; nx * ny * nz];
    let mut label = vec![usize::MAX; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                base[(z * ny + y) * nx + x] = background(spec, x, y);
            }
        }
    }
    // later lesions overwrite earlier ones where they overlap
    for (li, l) in lesions.iter().enumerate() {
        let (Some(xs), Some(ys), Some(zs)) =
            (l.shape.span(0, nx), l.shape.span(1, ny), l.shape.span(2, nz))
        else {
            continue;
        };
        for z in zs.0..=zs.1 {
            for y in ys.0..=ys.1 {
                for x in xs.0..=xs.1 {
                    if l.shape.contains(x as f64, y as f64, z as f64) {
                        label[(z * ny + y) * nx + x] = li;
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("validated noise std");
    let mut volumes = BTreeMap::new();
    for kind in SequenceKind::ALL {
        let mut nrng = stage_rng(spec.seed, &id, &format!("noise:{kind}"));
        let voxels = base
            .iter()
            .zip(&label)
            .map(|(&b, &li)| {
                let mut v = b;
                if li != usize::MAX {
                    v += lesions[li].offsets[kind.index()];
                }
                if spec.noise_std > 0.0 {
                    v += noise.sample(&mut nrng);
                }
                v.clamp(0.0, 1.0) as f32
            })
            .collect();
        volumes.insert(kind, Volume { dims: spec.dims, spacing: spec.spacing, voxels });
    }
    Ok(Study { id, volumes, truth_class: class, truth_boxes })
}

/// Generates the whole cohort, in index order.
pub fn generate_cohort(spec: &GenSpec) -> Result<Vec<Study>> {
    spec.validate()?;
    crate::par::map_indices(spec.total(), |i| generate_study(spec, i))
        .into_iter()
        .collect()
}
