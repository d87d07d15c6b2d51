//! Key-ROI regression: confidence filtering, per-slice pixel voting and
//! study-level top-fraction selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detect::ScoredBox;
use crate::model::Box2D;

/// Fused ROI on one slice; the classifier's input unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRoi {
    pub z: usize,
    pub bbox: Box2D,
    pub confidence: f64,
    pub contributor_count: usize,
}

/// Row of the key-ROI CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiRecord {
    pub study_id: String,
    pub z: usize,
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub confidence: f64,
    pub contributors: usize,
}

impl RoiRecord {
    pub const HEADER: [&'static str; 8] = ["study_id", "z", "x0", "y0", "x1", "y1", "confidence", "contributors"];

    pub fn new(study_id: &str, r: &KeyRoi) -> Self {
        RoiRecord {
            study_id: study_id.to_string(),
            z: r.z,
            x0: r.bbox.x0,
            y0: r.bbox.y0,
            x1: r.bbox.x1,
            y1: r.bbox.y1,
            confidence: r.confidence,
            contributors: r.contributor_count,
        }
    }

    pub fn key_roi(&self) -> KeyRoi {
        KeyRoi {
            z: self.z,
            bbox: Box2D::new(self.x0, self.y0, self.x1, self.y1),
            confidence: self.confidence,
            contributor_count: self.contributors,
        }
    }
}

/// Keeps boxes with `confidence >= threshold`, preserving order.
pub fn filter_boxes(boxes: &[ScoredBox], threshold: f64) -> Vec<ScoredBox> {
    boxes.iter().filter(|b| b.confidence >= threshold).copied().collect()
}

/// `floor(num/den + 1/2)` for positive `den`.
fn div_round_half_up(num: i64, den: i64) -> i64 {
    (2 * num + den).div_euclid(2 * den)
}

/// Per-pixel vote counts via a 2D difference array.
fn vote_map(boxes: &[ScoredBox], width: usize, height: usize) -> Vec<u32> {
    let (w1, h1) = (width + 1, height + 1);
    let mut diff = vec![0i64; w1 * h1];
    for b in boxes {
        let Some(c) = b.bbox.clip(width, height) else { continue };
        let (x0, y0, x1, y1) = (c.x0 as usize, c.y0 as usize, c.x1 as usize + 1, c.y1 as usize + 1);
        diff[y0 * w1 + x0] += 1;
        diff[y0 * w1 + x1] -= 1;
        diff[y1 * w1 + x0] -= 1;
        diff[y1 * w1 + x1] += 1;
    }
    for y in 0..h1 {
        for x in 1..w1 {
            diff[y * w1 + x] += diff[y * w1 + x - 1];
        }
    }
    for y in 1..h1 {
        for x in 0..w1 {
            diff[y * w1 + x] += diff[(y - 1) * w1 + x];
        }
    }
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| diff[y * w1 + x] as u32)
        .collect()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Pixel-voting fusion of all boxes on one slice.
///
/// The winner is the centroid (rounded half-up) of the largest 8-connected
/// region of maximal votes; equal-size regions resolve to the one whose
/// lexicographically smallest `(y, x)` pixel comes first. When the centroid
/// falls outside a non-convex region, the region pixel nearest to it wins.
/// The fused box is centred on the winner with the mean size of the boxes
/// covering it, and carries their mean confidence.
pub fn fuse_slice(boxes: &[ScoredBox], width: usize, height: usize) -> Option<KeyRoi> {
    if boxes.is_empty() || width == 0 || height == 0 {
        return None;
    }
    let z = boxes[0].z;
    let votes = vote_map(boxes, width, height);
    let max_votes = *votes.iter().max()?;
    if max_votes == 0 {
        return None;
    }

    // union-find labelling of the max-vote level set
    let n = width * height;
    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if votes[i] != max_votes {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut neighbours = [None; 4];
            if x > 0 {
                neighbours[0] = Some(i - 1);
            }
            if y > 0 {
                neighbours[2] = Some(i - width);
                if x > 0 {
                    neighbours[1] = Some(i - width - 1);
                }
                if x + 1 < width {
                    neighbours[3] = Some(i - width + 1);
                }
            }
            for j in neighbours.into_iter().flatten() {
                if votes[j] == max_votes {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }

    struct Region {
        size: i64,
        sum_x: i64,
        sum_y: i64,
        first: usize,
        pixels: Vec<usize>,
    }
    let mut regions: BTreeMap<usize, Region> = BTreeMap::new();
    for i in 0..n {
        if votes[i] != max_votes {
            continue;
        }
        let root = find(&mut parent, i);
        let r = regions.entry(root).or_insert(Region { size: 0, sum_x: 0, sum_y: 0, first: i, pixels: Vec::new() });
        r.size += 1;
        r.sum_x += (i % width) as i64;
        r.sum_y += (i / width) as i64;
        r.pixels.push(i);
    }
    // raster order makes `first` the lexicographic (y, x) minimum
    let best = regions
        .values()
        .min_by(|a, b| b.size.cmp(&a.size).then(a.first.cmp(&b.first)))?;

    let cx = div_round_half_up(best.sum_x, best.size);
    let cy = div_round_half_up(best.sum_y, best.size);
    let in_region = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && {
            let i = y as usize * width + x as usize;
            votes[i] == max_votes && best.pixels.binary_search(&i).is_ok()
        }
    };
    let (wx, wy) = if in_region(cx, cy) {
        (cx, cy)
    } else {
        let p = best
            .pixels
            .iter()
            .copied()
            .min_by_key(|&i| {
                let (x, y) = ((i % width) as i64, (i / width) as i64);
                ((x - cx).pow(2) + (y - cy).pow(2), i)
            })?;
        ((p % width) as i64, (p / width) as i64)
    };

    let contributors: Vec<&ScoredBox> = boxes.iter().filter(|b| b.bbox.contains(wx, wy)).collect();
    let k = contributors.len() as i64;
    let w = div_round_half_up(contributors.iter().map(|b| b.bbox.width()).sum(), k);
    let h = div_round_half_up(contributors.iter().map(|b| b.bbox.height()).sum(), k);
    // summed in sorted order so the result does not depend on input order
    let mut confs: Vec<f64> = contributors.iter().map(|b| b.confidence).collect();
    confs.sort_by(f64::total_cmp);
    let confidence = confs.iter().sum::<f64>() / k as f64;
    let x0 = wx - w / 2;
    let y0 = wy - h / 2;
    let bbox = Box2D::new(x0, y0, x0 + w - 1, y0 + h - 1).clip(width, height)?;
    Some(KeyRoi { z, bbox, confidence, contributor_count: contributors.len() })
}

/// Number of ROIs kept out of `n` for `keep_fraction`: `ceil(f * n)`, at least one.
pub fn keep_count(n: usize, keep_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // guard against products like 0.48 * 25 = 12.000000000000002
    let k = (keep_fraction * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Keeps the most confident `ceil(keep_fraction * N)` ROIs (ties: lower z first).
pub fn select_key_rois(rois: &[KeyRoi], keep_fraction: f64) -> Vec<KeyRoi> {
    let mut sorted = rois.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.z.cmp(&b.z)));
    sorted.truncate(keep_count(rois.len(), keep_fraction));
    sorted
}

/// Filter, fuse per slice, then select. An empty result is a localization failure.
pub fn localize_study(
    boxes: &[ScoredBox],
    width: usize,
    height: usize,
    conf_threshold: f64,
    keep_fraction: f64,
) -> Vec<KeyRoi> {
    let mut by_slice: BTreeMap<usize, Vec<ScoredBox>> = BTreeMap::new();
    for b in filter_boxes(boxes, conf_threshold) {
        by_slice.entry(b.z).or_default().push(b);
    }
    let fused: Vec<KeyRoi> = by_slice
        .values()
        .filter_map(|bs| fuse_slice(bs, width, height))
        .collect();
    select_key_rois(&fused, keep_fraction)
}
