//! Shared reference implementations and generators for the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use lesion_cad::detect::ScoredBox;
use lesion_cad::eval::Outcome;
use lesion_cad::fuse::KeyRoi;
use lesion_cad::model::{Box2D, LesionClass, SequenceKind};
use rand::Rng;

/// Random slice up to 32x32 with up to six boxes, often overlapping.
pub fn random_slice(rng: &mut impl Rng) -> (usize, usize, Vec<ScoredBox>) {
    let w = rng.random_range(1..=32usize);
    let h = rng.random_range(1..=32usize);
    let n = rng.random_range(0..=6usize);
    let z = rng.random_range(0..5usize);
    // anchor most boxes near a shared point so votes pile up
    let (ax, ay) = (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
    let boxes = (0..n)
        .map(|_| {
            let near = rng.random_bool(0.7);
            let (cx, cy) = if near {
                (
                    (ax + rng.random_range(-3..=3)).clamp(0, w as i64 - 1),
                    (ay + rng.random_range(-3..=3)).clamp(0, h as i64 - 1),
                )
            } else {
                (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64)
            };
            let hw = rng.random_range(0..=6i64);
            let hh = rng.random_range(0..=6i64);
            let x0 = (cx - hw).max(0);
            let y0 = (cy - hh).max(0);
            let x1 = (cx + rng.random_range(0..=6i64)).min(w as i64 - 1);
            let y1 = (cy + rng.random_range(0..=6i64)).min(h as i64 - 1);
            // a coarse confidence grid makes equal-confidence ties common
            let confidence = if rng.random_bool(0.3) {
                rng.random_range(0..=4) as f64 / 4.0
            } else {
                rng.random::<f64>()
            };
            ScoredBox { bbox: Box2D::new(x0, y0, x1, y1), confidence, source: SequenceKind::ALL[rng.random_range(0..5)], z }
        })
        .collect();
    (w, h, boxes)
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Exhaustive per-pixel voting and breadth-first region growing.
pub fn reference_fuse(boxes: &[ScoredBox], w: usize, h: usize) -> Option<KeyRoi> {
    if boxes.is_empty() {
        return None;
    }
    let mut votes = vec![vec![0usize; w]; h];
    for (y, row) in votes.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = boxes.iter().filter(|b| b.bbox.contains(x as i64, y as i64)).count();
        }
    }
    let max = votes.iter().flatten().copied().max()?;
    if max == 0 {
        return None;
    }
    // regions in raster order of their first pixel
    let mut label = vec![vec![usize::MAX; w]; h];
    let mut regions: Vec<Vec<(i64, i64)>> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if votes[y][x] != max || label[y][x] != usize::MAX {
                continue;
            }
            let id = regions.len();
            let mut pixels = Vec::new();
            let mut q = VecDeque::from([(x, y)]);
            label[y][x] = id;
            while let Some((px, py)) = q.pop_front() {
                pixels.push((px as i64, py as i64));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if votes[ny][nx] == max && label[ny][nx] == usize::MAX {
                            label[ny][nx] = id;
                            q.push_back((nx, ny));
                        }
                    }
                }
            }
            regions.push(pixels);
        }
    }
    // largest; earlier (smaller (y, x) minimum) wins ties because regions are in raster order
    let mut best = &regions[0];
    for r in &regions[1..] {
        if r.len() > best.len() {
            best = r;
        }
    }
    let n = best.len() as f64;
    let cx = round_half_up(best.iter().map(|p| p.0 as f64).sum::<f64>() / n);
    let cy = round_half_up(best.iter().map(|p| p.1 as f64).sum::<f64>() / n);
    let (wx, wy) = if best.contains(&(cx, cy)) {
        (cx, cy)
    } else {
        *best
            .iter()
            .min_by_key(|(x, y)| ((x - cx).pow(2) + (y - cy).pow(2), *y, *x))
            .unwrap()
    };
    let contrib: Vec<&ScoredBox> = boxes.iter().filter(|b| b.bbox.contains(wx, wy)).collect();
    let k = contrib.len() as f64;
    let bw = round_half_up(contrib.iter().map(|b| b.bbox.width() as f64).sum::<f64>() / k);
    let bh = round_half_up(contrib.iter().map(|b| b.bbox.height() as f64).sum::<f64>() / k);
    let x0 = wx - bw.div_euclid(2);
    let y0 = wy - bh.div_euclid(2);
    let bbox = Box2D::new(
        x0.max(0),
        y0.max(0),
        (x0 + bw - 1).min(w as i64 - 1),
        (y0 + bh - 1).min(h as i64 - 1),
    );
    let confidence = contrib.iter().map(|b| b.confidence).sum::<f64>() / k;
    Some(KeyRoi { z: boxes[0].z, bbox, confidence, contributor_count: contrib.len() })
}

/// Confusion-matrix reference: returns (accuracy, per-class (tp, fp, tn, fn)).
pub fn naive_confusion(outcomes: &[Outcome]) -> (f64, [(usize, usize, usize, usize); 3]) {
    // matrix[truth][pred], with an extra column for "no prediction"
    let mut m = [[0usize; 4]; 3];
    for o in outcomes {
        let col = o.predicted.map_or(3, |p| p.index());
        m[o.truth.index()][col] += 1;
    }
    let total: usize = m.iter().flatten().sum();
    let correct: usize = (0..3).map(|i| m[i][i]).sum();
    let mut per = [(0, 0, 0, 0); 3];
    for c in 0..3 {
        let tp = m[c][c];
        let fn_: usize = (0..4).filter(|&j| j != c).map(|j| m[c][j]).sum();
        let fp: usize = (0..3).filter(|&i| i != c).map(|i| m[i][c]).sum();
        per[c] = (tp, fp, total - tp - fn_ - fp, fn_);
    }
    (correct as f64 / total.max(1) as f64, per)
}

pub fn random_outcomes(rng: &mut impl Rng, n: usize) -> Vec<Outcome> {
    (0..n)
        .map(|_| Outcome {
            truth: LesionClass::ALL[rng.random_range(0..3)],
            predicted: if rng.random_bool(0.1) { None } else { Some(LesionClass::ALL[rng.random_range(0..3)]) },
        })
        .collect()
}
