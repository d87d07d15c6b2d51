//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Runs without the libtest harness so the lines always reach the terminal.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lesion_cad::classify::mlp::{Mlp, MlpModel};
use lesion_cad::classify::{aggregate_study, mc_predict_roi, DEFAULT_LAYER_SIZES, FEATURE_LEN};
use lesion_cad::eval::{categorical_metrics, lroc_curve, reader_compare, synthetic_reader, LrocEntry, Outcome};
use lesion_cad::fuse::{fuse_slice, keep_count};
use lesion_cad::io::{load_config, ConfigFile};
use lesion_cad::model::{LesionClass, PipelineConfig, TrainParams};
use lesion_cad::pipeline::{run_pipeline, CohortSource, PipelineOutput};
use lesion_cad::report::{reader_overlay, write_outputs, LROC_FILES, METRICS_FILE, SWEEP_FILE};
use lesion_cad::synth::{GenSpec, HARD_NOISE_STD, MODERATE_NOISE_STD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Run {
    output: PipelineOutput,
    elapsed: Duration,
    dir: tempfile::TempDir,
}

fn phantom_run(noise_std: f64) -> Run {
    let spec = GenSpec { noise_std, ..GenSpec::default() };
    let start = Instant::now();
    let output = run_pipeline(&CohortSource::Generated(spec), &PipelineConfig::default()).expect("pipeline run");
    let elapsed = start.elapsed();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &output).unwrap();
    Run { output, elapsed, dir }
}

fn moderate() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| phantom_run(MODERATE_NOISE_STD))
}

fn hard() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| phantom_run(HARD_NOISE_STD))
}

fn fusion_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (w, h, boxes) = common::random_slice(&mut rng);
        let (got, want) = (fuse_slice(&boxes, w, h), common::reference_fuse(&boxes, w, h));
        let same = match (&got, &want) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                a.z == b.z
                    && a.bbox == b.bbox
                    && a.contributor_count == b.contributor_count
                    && (a.confidence - b.confidence).abs() <= 1e-12
            }
            _ => false,
        };
        mismatches += usize::from(!same);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(mismatches == 0 && secs < 10.0, format!("{mismatches} mismatches over 1000 slices in {secs:.2} s"))
}

fn constants() -> Check {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.conf");
    let cfg = load_config(&path).map_err(|e| e.to_string())?;
    let p = &cfg.pipeline;
    let ok = cfg == ConfigFile::default()
        && p.roi_conf_threshold == 0.5
        && p.keyroi_keep_fraction == 0.48
        && keep_count(10, p.keyroi_keep_fraction) == 5
        && keep_count(3, p.keyroi_keep_fraction) == 2
        && p.dropout_rate == 0.2
        && p.mc_passes == 100
        && p.folds == 5;
    ensure(
        ok,
        format!(
            "filter {}, keep {} (10 -> {}), dropout {}, {} passes, {} folds",
            p.roi_conf_threshold,
            p.keyroi_keep_fraction,
            keep_count(10, p.keyroi_keep_fraction),
            p.dropout_rate,
            p.mc_passes,
            p.folds
        ),
    )
}

fn gradient_check() -> Check {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let net = Mlp::init(&[6, 8, 5, 3], &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let label = rng.random_range(0..3);
        let analytic: Vec<f64> = net.loss_and_grad(&x, label, None).1.params().copied().collect();
        let mut probe = net.clone();
        for (i, a) in analytic.iter().enumerate() {
            let orig = *probe.params_mut().nth(i).unwrap();
            *probe.params_mut().nth(i).unwrap() = orig + STEP;
            let up = probe.loss_and_grad(&x, label, None).0;
            *probe.params_mut().nth(i).unwrap() = orig - STEP;
            let down = probe.loss_and_grad(&x, label, None).0;
            *probe.params_mut().nth(i).unwrap() = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
        }
    }
    ensure(worst < 1e-4, format!("worst relative error {worst:.2e} over 100 draws"))
}

fn mc_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let feature = |rng: &mut ChaCha8Rng| (0..FEATURE_LEN).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();

    let det = MlpModel::initialize(&DEFAULT_LAYER_SIZES, 0.0, TrainParams::default(), 1);
    let rois: Vec<_> = (0..20).map(|i| mc_predict_roi(&det, &feature(&mut rng), 100, i, "roi")).collect();
    let s = aggregate_study(&rois);
    let exact = s.uncertainty == 0.0 && s.confidence == 1.0;

    let mut max_u: f64 = 0.0;
    let mut min_conf: f64 = 1.0;
    for m in 0..100u64 {
        let model = MlpModel::initialize(&DEFAULT_LAYER_SIZES, 0.2, TrainParams::default(), 100 + m);
        for r in 0..100u64 {
            let roi = mc_predict_roi(&model, &feature(&mut rng), 100, r, "roi");
            let study = aggregate_study(std::slice::from_ref(&roi));
            max_u = max_u.max(roi.uncertainty());
            min_conf = min_conf.min(study.confidence);
        }
    }
    ensure(
        exact && max_u <= 0.5 && min_conf >= 0.5,
        format!(
            "dropout 0: uncertainty {} confidence {}; 10000 ROIs: max uncertainty {max_u:.4}, min confidence {min_conf:.4}",
            s.uncertainty, s.confidence
        ),
    )
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let outcomes = common::random_outcomes(&mut rng, n);
        let m = categorical_metrics(&outcomes);
        let (acc, tables) = common::naive_confusion(&outcomes);
        let counts_ok = m
            .per_class
            .iter()
            .zip(&tables)
            .all(|(c, &(tp, fp, tn, fn_))| (c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_));
        if !counts_ok || (m.accuracy.unwrap() - acc).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    let miss = categorical_metrics(&[
        Outcome { truth: LesionClass::Hcc, predicted: None },
        Outcome { truth: LesionClass::Icc, predicted: Some(LesionClass::Icc) },
    ]);
    let failure_rule = miss.accuracy == Some(0.5) && miss.per_class[0].fn_ == 1 && miss.per_class[1].tn == 1;
    ensure(
        mismatches == 0 && failure_rule,
        format!("{mismatches} mismatches over 1000 sets; non-localized study counted wrong and as FN: {failure_rule}"),
    )
}

fn lroc_ceiling() -> Check {
    let mut worst: f64 = 0.0;
    let mut ceiling_ok = true;
    for n in 1..=20usize {
        for k in 0..=n {
            let mut v: Vec<LrocEntry> = (0..n)
                .map(|i| {
                    let localized = i >= k;
                    LrocEntry { score: localized.then_some(0.9), positive: true, localized }
                })
                .collect();
            v.extend((0..7).map(|_| LrocEntry { score: Some(0.1), positive: false, localized: true }));
            let c = lroc_curve(&v).map_err(|e| e.to_string())?;
            let analytic = (n - k) as f64 / n as f64;
            ceiling_ok &= c.max_sensitivity == analytic;
            worst = worst.max((c.area - analytic).abs());
        }
    }
    ensure(
        ceiling_ok && worst <= 1e-9,
        format!("ceiling exact for all k <= N <= 20: {ceiling_ok}; worst area error {worst:.1e}"),
    )
}

fn end_to_end() -> Check {
    let m = moderate();
    let h = hard();
    let acc = m.output.report.summary.accuracy.mean;
    let failures = h.output.report.localization_failures;
    let n = h.output.report.n_studies;
    let limit = Duration::from_secs(300);
    ensure(
        m.output.report.n_studies == 195
            && m.output.report.folds.len() == 5
            && m.elapsed < limit
            && h.elapsed < limit
            && acc >= 0.85
            && failures >= 1
            && failures as f64 <= 0.1 * n as f64,
        format!(
            "moderate: accuracy {acc:.3} in {:.1} s; hard: {failures}/{n} localization failures in {:.1} s",
            m.elapsed.as_secs_f64(),
            h.elapsed.as_secs_f64()
        ),
    )
}

fn confidence_helps() -> Check {
    let r = &hard().output.report.retention;
    let (u, f) = (&r.unfiltered, &r.filtered);
    let (uf1, ff1) = (u.mean_f1.unwrap_or(f64::NAN), f.mean_f1.unwrap_or(f64::NAN));
    let (us, fs) = (u.sens_at_80_spec.unwrap_or(f64::NAN), f.sens_at_80_spec.unwrap_or(f64::NAN));
    ensure(
        ff1 >= uf1 + 0.02 && fs >= us,
        format!(
            "kept {:.0}%: mean F1 {uf1:.3} -> {ff1:.3}, sens@80%spec {us:.3} -> {fs:.3}",
            100.0 * r.retained_fraction
        ),
    )
}

fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut names = vec![METRICS_FILE, SWEEP_FILE];
    names.extend(LROC_FILES.iter().map(|(_, f)| *f));
    names.into_iter().map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap())).collect()
}

fn determinism() -> Check {
    let reference = artifact_bytes(moderate().dir.path());
    let mut detail = Vec::new();
    let mut ok = true;
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let run = pool.install(|| phantom_run(MODERATE_NOISE_STD));
        let bytes = artifact_bytes(run.dir.path());
        let differing: Vec<&String> = reference.keys().filter(|k| reference[*k] != bytes[*k]).collect();
        ok &= differing.is_empty();
        detail.push(format!("{threads} thread(s): {} files differ", differing.len()));
    }
    ensure(ok, format!("{} artifacts compared; {}", reference.len(), detail.join(", ")))
}

fn readers() -> Check {
    let run = moderate();
    let truth_list: Vec<(String, LesionClass)> =
        run.output.records.iter().map(|r| (r.study_id.clone(), r.truth)).collect();
    let truth: BTreeMap<String, LesionClass> = truth_list.iter().cloned().collect();
    let mut records = Vec::new();
    for (id, rate) in [("reader05", 0.05), ("reader20", 0.2), ("reader40", 0.4)] {
        records.extend(synthetic_reader(&truth_list, id, rate, 2021));
    }
    let summaries = reader_compare(&records, &truth).map_err(|e| e.to_string())?;
    let acc: Vec<f64> = summaries.iter().map(|s| s.metrics.accuracy.unwrap()).collect();
    let overlay = reader_overlay(&summaries, Some(&run.dir.path().join(LROC_FILES[0].1))).map_err(|e| e.to_string())?;
    let points: BTreeSet<(u64, u64)> = overlay
        .iter()
        .filter(|r| r.kind == "reader")
        .map(|r| (r.fpf.to_bits(), r.tpf.to_bits()))
        .collect();
    let has_curve = overlay.iter().any(|r| r.kind == "curve");
    ensure(
        acc[0] > acc[1] && acc[1] > acc[2] && points.len() == 3 && has_curve,
        format!(
            "accuracies {:.3} > {:.3} > {:.3}; {} distinct operating points; {}",
            acc[0],
            acc[1],
            acc[2],
            points.len(),
            summaries
                .iter()
                .map(|s| format!("{} ({:.2}, {:.2})", s.reader_id, s.operating_point.0, s.operating_point.1))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn main() {
    let criteria: [(u8, &str, fn() -> Check); 10] = [
        (1, "fusion oracle equivalence", fusion_oracle),
        (2, "default constants", constants),
        (3, "gradient check", gradient_check),
        (4, "MC dropout invariants", mc_invariants),
        (5, "metrics oracle", metrics_oracle),
        (6, "LROC ceiling", lroc_ceiling),
        (7, "end-to-end phantom run", end_to_end),
        (8, "confidence informs performance", confidence_helps),
        (9, "determinism across thread counts", determinism),
        (10, "reader comparison", readers),
    ];
    // quiet panic output; the failure line carries the message
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS [{n:>2}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
