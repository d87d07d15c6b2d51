//! Detector contract shared by the reference and replay detectors, plus
//! behavioural properties of the reference detector.

use std::collections::{BTreeMap, BTreeSet};

use lesion_cad::detect::{
    detect_slice, BoxRecord, Detector, DetectorInput, DetectorParams, DogDetector, ReplayDetector, ScoredBox,
};
use lesion_cad::image::Image2D;
use lesion_cad::model::{LesionClass, PerSequence, SequenceKind, Study, Volume};
use lesion_cad::synth::{generate_cohort, GenSpec};
use lesion_cad::Error;
use proptest::prelude::*;

fn small_cohort() -> Vec<Study> {
    generate_cohort(&GenSpec { n_per_class: [2, 2, 2], dims: [40, 40, 8], ..GenSpec::default() }).unwrap()
}

fn dog() -> DogDetector {
    DogDetector { params: PerSequence::from_fn(|_| DetectorParams::default()) }
}

fn check_contract(det: &dyn Detector, studies: &[Study]) {
    for s in studies {
        let a = det.detect(s).unwrap();
        assert_eq!(a, det.detect(s).unwrap(), "{}: {} not deterministic", s.id, det.name());
        let [nx, ny, nz] = s.dims();
        for b in &a {
            assert!((0.0..=1.0).contains(&b.confidence), "{b:?}");
            assert!(b.z < nz && b.bbox.is_valid() && b.bbox.within(nx, ny), "{b:?}");
        }
        let mut sorted = a.clone();
        lesion_cad::detect::sort_boxes(&mut sorted);
        assert_eq!(a, sorted);
    }
}

#[test]
fn reference_and_replay_share_the_contract() {
    let studies = small_cohort();
    let reference = dog();
    check_contract(&reference, &studies);

    let records: Vec<BoxRecord> = studies
        .iter()
        .flat_map(|s| reference.detect(s).unwrap().iter().map(|b| BoxRecord::new(&s.id, b)).collect::<Vec<_>>())
        .collect();
    assert!(!records.is_empty());
    let replay = ReplayDetector::from_records(records.into_iter().rev()).unwrap();
    check_contract(&replay, &studies);
    for s in &studies {
        assert_eq!(replay.detect(s).unwrap(), reference.detect(s).unwrap());
    }
}

#[test]
fn replay_rejects_bad_rows() {
    let studies = small_cohort();
    let row = |conf: f64, x1: i64| BoxRecord {
        study_id: studies[0].id.clone(),
        sequence: SequenceKind::DWI,
        z: 0,
        x0: 1,
        y0: 1,
        x1,
        y1: 3,
        confidence: conf,
    };
    assert!(matches!(ReplayDetector::from_records([row(1.5, 3)]), Err(Error::Ingestion(_))));
    assert!(matches!(ReplayDetector::from_records([row(0.5, 0)]), Err(Error::Ingestion(_))));
    let outside = ReplayDetector::from_records([row(0.5, 40)]).unwrap();
    assert!(matches!(outside.detect(&studies[0]), Err(Error::Ingestion(_))));
    // unknown studies simply have no boxes
    assert!(outside.detect(&studies[1]).unwrap().is_empty());
}

fn blob_image(w: usize, h: usize, cx: i64, cy: i64, r: i64) -> Image2D {
    let mut img = Image2D::filled(w, h, 0.3);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                img.set(x as usize, y as usize, 0.3 + 0.2 * (1.0 - ((x - cx).abs() as f64) / (r as f64 + 1.0)));
            }
        }
    }
    img
}

fn detect(img: &Image2D, params: &DetectorParams) -> Vec<ScoredBox> {
    let input = DetectorInput { primary: img, secondary: None, sequence: SequenceKind::T2WI, z: 0 };
    detect_slice(&input, params).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn translation_moves_boxes_by_the_same_offset(dx in -8i64..=8, dy in -8i64..=8, r in 2i64..6) {
        // the blob stays well inside the 96x96 frame, so edge padding never sees it
        let p = DetectorParams::default();
        let base = detect(&blob_image(96, 96, 48, 48, r), &p);
        let moved = detect(&blob_image(96, 96, 48 + dx, 48 + dy, r), &p);
        prop_assert!(!base.is_empty());
        prop_assert_eq!(base.len(), moved.len());
        for (a, b) in base.iter().zip(&moved) {
            prop_assert_eq!(
                (a.bbox.x0 + dx, a.bbox.y0 + dy, a.bbox.x1 + dx, a.bbox.y1 + dy),
                (b.bbox.x0, b.bbox.y0, b.bbox.x1, b.bbox.y1)
            );
            prop_assert_eq!(a.confidence, b.confidence);
        }
    }

    #[test]
    fn raising_the_threshold_only_shrinks_detections(t in 1.0f64..20.0, extra in 0.0f64..20.0, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image2D::filled(48, 48, 0.3);
        for _ in 0..3 {
            let (cx, cy, r) = (rng.random_range(4..44), rng.random_range(4..44), rng.random_range(2..7));
            let v = rng.random_range(0.05..0.4);
            for y in 0..48i64 {
                for x in 0..48i64 {
                    if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                        img.set(x as usize, y as usize, 0.3 + v);
                    }
                }
            }
        }
        for px in img.pixels.iter_mut() {
            *px += rng.random_range(-0.02..0.02);
        }
        let low = detect(&img, &DetectorParams { response_threshold: t, ..Default::default() });
        let high = detect(&img, &DetectorParams { response_threshold: t + extra, ..Default::default() });
        for h in &high {
            prop_assert!(
                low.iter().any(|l| l.bbox.x0 <= h.bbox.x0 && l.bbox.y0 <= h.bbox.y0
                    && l.bbox.x1 >= h.bbox.x1 && l.bbox.y1 >= h.bbox.y1),
                "{:?} not inside any of {:?}", h, low
            );
        }
    }
}

fn overlaps(a: &lesion_cad::model::Box2D, b: &lesion_cad::model::Box2D) -> bool {
    a.x0 <= b.x1 && b.x0 <= a.x1 && a.y0 <= b.y1 && b.y0 <= a.y1
}

#[test]
fn large_lesion_is_seen_on_several_sequences() {
    let mut spec = GenSpec { n_per_class: [4, 0, 0], noise_std: 0.0, ..GenSpec::default() };
    spec.signatures[LesionClass::Hcc.index()].radius_mm = (11.0, 13.0);
    let det = dog();
    for s in generate_cohort(&spec).unwrap() {
        assert!(s.largest_lesion_mm() > 20.0);
        let t = s.truth_boxes.iter().max_by_key(|t| t.bbox.area()).unwrap();
        let seen: BTreeSet<SequenceKind> = det
            .detect(&s)
            .unwrap()
            .iter()
            .filter(|b| b.z == t.z && overlaps(&b.bbox, &t.bbox))
            .map(|b| b.source)
            .collect();
        assert!(seen.len() >= 3, "{}: {seen:?}", s.id);
    }
}

#[test]
fn flat_volumes_and_infinite_thresholds_yield_nothing() {
    let dims = [24, 24, 4];
    let volumes: BTreeMap<SequenceKind, Volume> =
        SequenceKind::ALL.iter().map(|&k| (k, Volume::zeros(dims, [1.0, 1.0, 4.0]))).collect();
    let flat = Study { id: "Z".into(), volumes, truth_class: LesionClass::Icc, truth_boxes: Vec::new() };
    assert!(dog().detect(&flat).unwrap().is_empty());

    let studies = small_cohort();
    let blind = DogDetector {
        params: PerSequence::from_fn(|_| DetectorParams { response_threshold: f64::INFINITY, ..Default::default() }),
    };
    assert!(studies.iter().all(|s| blind.detect(s).unwrap().is_empty()));
}

#[test]
fn invalid_parameters_name_the_sequence() {
    let mut params = PerSequence::from_fn(|_| DetectorParams::default());
    params[SequenceKind::DWI].min_area = 0;
    let err = DogDetector { params }.detect(&small_cohort()[0]).unwrap_err();
    assert!(err.to_string().contains("detector.DWI.min_area"), "{err}");
}
