use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use lesion_cad::classify::{predict_study, roi_features, train, PredictionRecord, ReplayClassifier, DEFAULT_LAYER_SIZES};
use lesion_cad::detect::{BoxRecord, Detector, DogDetector, ReplayDetector};
use lesion_cad::eval::readers::{read_reader_csv, validate_readers};
use lesion_cad::eval::{reader_compare, synthetic_reader, ReaderRecord};
use lesion_cad::fuse::{localize_study, RoiRecord};
use lesion_cad::io::{
    list_study_dirs, load_config, load_model, read_csv, read_study, read_study_header, save_model, write_csv,
    write_json, ConfigFile,
};
use lesion_cad::model::{LesionClass, LocalizationRule};
use lesion_cad::pipeline::{digest_cohort, evaluate, truth_box_features, CohortSource};
use lesion_cad::report::{load_metrics, render_report, write_outputs, write_run_manifest};
use lesion_cad::synth::{generate_study, GenSpec};
use lesion_cad::{par, Error, Result};

#[derive(Parser)]
#[command(name = "lesion-cad", version, about = "Liver-lesion CAD on synthetic MRI phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the generator and the pipeline seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom cohort as study directories.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the reference detector and write candidate boxes.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, fuse and select key ROIs from a box CSV.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify studies with MC dropout (training a model if none is given).
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Key-ROI CSV; detected and fused on the fly when omitted.
        #[arg(long)]
        rois: Option<PathBuf>,
        /// Trained model file.
        #[arg(long, conflicts_with = "replay")]
        model: Option<PathBuf>,
        /// Per-pass probability CSV produced by another classifier.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Cross-validated detect, fuse, classify and evaluate.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Study directories; a phantom cohort is generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Zero-ROI-only localization rule: any study with a key ROI counts as localized.
        #[arg(long)]
        strict_lroc: bool,
        /// Replay boxes from a CSV instead of running the reference detector.
        #[arg(long)]
        boxes: Option<PathBuf>,
    },
    /// Compare human (or simulated) readers against truth.
    Readers {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reader CSV: study_id,reader_id,label,confidence.
        #[arg(long, required_unless_present = "synthetic")]
        readers: Option<PathBuf>,
        /// Comma-separated error rates for simulated readers, e.g. 0.05,0.2,0.4.
        #[arg(long, value_delimiter = ',', conflicts_with = "readers")]
        synthetic: Vec<f64>,
        /// LROC CSV from a pipeline run to include in the overlay.
        #[arg(long)]
        lroc: Option<PathBuf>,
    },
    /// Print the summary of a pipeline output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ConfigFile> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = common.seed {
        cfg.gen.seed = seed;
        cfg.pipeline.seed = seed;
    }
    Ok(cfg)
}

fn cmd_gen(common: &Common, out: &Path) -> Result<()> {
    let cfg = load(common)?;
    let spec: &GenSpec = &cfg.gen;
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let written = par::map_indices(spec.total(), |i| -> Result<()> {
        let study = generate_study(spec, i)?;
        lesion_cad::io::write_study(&out.join(&study.id), &study)
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;
    println!("wrote {} studies to {}", spec.total(), out.display());
    Ok(())
}

fn cmd_detect(common: &Common, data: &Path, out: &Path) -> Result<()> {
    let cfg = load(common)?;
    let detector = DogDetector { params: cfg.pipeline.detector.clone() };
    let per_study = par::map_slice(&list_study_dirs(data)?, |d| -> Result<Vec<BoxRecord>> {
        let study = read_study(d)?;
        Ok(detector.detect(&study)?.iter().map(|b| BoxRecord::new(&study.id, b)).collect())
    });
    let mut rows = Vec::new();
    for r in per_study {
        rows.extend(r?);
    }
    write_csv(out, &BoxRecord::HEADER, &rows)?;
    println!("wrote {} boxes to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_fuse(common: &Common, data: &Path, boxes: &Path, out: &Path) -> Result<()> {
    let cfg = load(common)?.pipeline;
    let records: Vec<BoxRecord> = read_csv(boxes)?;
    let replay = ReplayDetector::from_records(records)?;
    let mut rows = Vec::new();
    let mut failures = 0;
    for dir in list_study_dirs(data)? {
        let h = read_study_header(&dir)?;
        let rois = localize_study(
            replay.boxes_for(&h.id),
            h.dims[0],
            h.dims[1],
            cfg.roi_conf_threshold,
            cfg.keyroi_keep_fraction,
        );
        failures += usize::from(rois.is_empty());
        rows.extend(rois.iter().map(|r| RoiRecord::new(&h.id, r)));
    }
    write_csv(out, &RoiRecord::HEADER, &rows)?;
    println!("wrote {} key ROIs to {} ({failures} studies without any)", rows.len(), out.display());
    Ok(())
}

fn cmd_classify(
    common: &Common,
    data: &Path,
    out: &Path,
    rois: Option<&Path>,
    model: Option<&Path>,
    replay: Option<&Path>,
) -> Result<()> {
    let cfg = load(common)?.pipeline;
    std::fs::create_dir_all(out)?;
    let dirs = list_study_dirs(data)?;
    let rows: Vec<PredictionRecord> = if let Some(replay) = replay {
        let clf = ReplayClassifier::from_csv(replay)?;
        dirs.iter()
            .map(|d| {
                let id = read_study_header(d)?.id;
                Ok(PredictionRecord::new(&id, &clf.predict(&id)))
            })
            .collect::<Result<_>>()?
    } else {
        let model = match model {
            Some(p) => load_model(p)?,
            None => {
                let examples = par::map_slice(&dirs, |d| -> Result<Vec<(Vec<f64>, LesionClass)>> {
                    let s = read_study(d)?;
                    Ok(truth_box_features(&s).into_iter().map(|f| (f, s.truth_class)).collect())
                });
                let mut data = Vec::new();
                for e in examples {
                    data.extend(e?);
                }
                let m = train(&DEFAULT_LAYER_SIZES, cfg.dropout_rate, &cfg.train, cfg.seed, &data)?;
                save_model(&out.join("model.txt"), &m)?;
                m
            }
        };
        let given: Option<BTreeMap<String, Vec<RoiRecord>>> = match rois {
            Some(p) => {
                let mut by_id: BTreeMap<String, Vec<RoiRecord>> = BTreeMap::new();
                for r in read_csv::<RoiRecord>(p)? {
                    by_id.entry(r.study_id.clone()).or_default().push(r);
                }
                Some(by_id)
            }
            None => None,
        };
        let detector = DogDetector { params: cfg.detector.clone() };
        par::map_slice(&dirs, |d| -> Result<PredictionRecord> {
            let study = read_study(d)?;
            let [nx, ny, _] = study.dims();
            let key_rois = match &given {
                Some(m) => m.get(&study.id).map(|v| v.iter().map(RoiRecord::key_roi).collect()).unwrap_or_default(),
                None => localize_study(&detector.detect(&study)?, nx, ny, cfg.roi_conf_threshold, cfg.keyroi_keep_fraction),
            };
            let feats: Vec<_> = key_rois.iter().map(|r| roi_features(&study, r)).collect();
            let p = predict_study(&model, &study.id, &feats, cfg.mc_passes, cfg.seed);
            Ok(PredictionRecord::new(&study.id, &p))
        })
        .into_iter()
        .collect::<Result<_>>()?
    };
    let path = out.join("predictions.csv");
    write_csv(&path, &PredictionRecord::HEADER, &rows)?;
    println!("wrote {} predictions to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_pipeline(common: &Common, data: Option<&Path>, out: &Path, strict: bool, boxes: Option<&Path>) -> Result<()> {
    let cfg_file = load(common)?;
    let mut cfg = cfg_file.pipeline;
    if strict {
        cfg.localization_rule = LocalizationRule::AnyRoi;
    }
    cfg.validate()?;
    let source = match data {
        Some(d) => CohortSource::Directory(d.to_path_buf()),
        None => CohortSource::Generated(cfg_file.gen.clone()),
    };
    let detector: Box<dyn Detector> = match boxes {
        Some(p) => Box::new(ReplayDetector::from_csv(p)?),
        None => Box::new(DogDetector { params: cfg.detector.clone() }),
    };
    let mut timings = BTreeMap::new();
    let t = Instant::now();
    let (digests, fingerprint) = digest_cohort(&source, &cfg, detector.as_ref())?;
    timings.insert("detect_fuse".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let output = evaluate(&digests, &cfg, &fingerprint)?;
    timings.insert("train_evaluate".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let files = write_outputs(out, &output)?;
    timings.insert("write".to_string(), t.elapsed().as_secs_f64());
    let mut inputs: Vec<String> = data.map(|d| d.display().to_string()).into_iter().collect();
    inputs.extend(common.config.iter().map(|p| p.display().to_string()));
    inputs.extend(boxes.map(|p| p.display().to_string()));
    write_run_manifest(out, &output.report, &cfg, inputs, timings, &files)?;
    print!("{}", render_report(&output.report));
    Ok(())
}

fn cmd_readers(
    common: &Common,
    data: &Path,
    out: &Path,
    readers: Option<&Path>,
    synthetic: &[f64],
    lroc: Option<&Path>,
) -> Result<()> {
    let cfg = load(common)?.pipeline;
    std::fs::create_dir_all(out)?;
    let mut truth = BTreeMap::new();
    for d in list_study_dirs(data)? {
        let h = read_study_header(&d)?;
        truth.insert(h.id, h.class);
    }
    let records: Vec<ReaderRecord> = match readers {
        Some(p) => read_reader_csv(p)?,
        None => {
            let cohort: Vec<(String, LesionClass)> = truth.iter().map(|(k, v)| (k.clone(), *v)).collect();
            let mut recs = Vec::new();
            for rate in synthetic {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::config("synthetic", format!("error rate {rate} outside [0, 1]")));
                }
                recs.extend(synthetic_reader(&cohort, &format!("reader_{rate}"), *rate, cfg.seed));
            }
            write_csv(&out.join("readers.csv"), &["study_id", "reader_id", "label", "confidence"], &recs)?;
            recs
        }
    };
    validate_readers(&records, &truth)?;
    let summaries = reader_compare(&records, &truth)?;
    write_json(&out.join("readers.json"), &summaries)?;
    let overlay = lesion_cad::report::reader_overlay(&summaries, lroc)?;
    lesion_cad::report::write_overlay_csv(&out.join("readers_overlay.csv"), &overlay)?;
    for s in &summaries {
        let (fpf, tpf) = s.operating_point;
        println!(
            "{:<16} accuracy {:.3}  mean F1 {:.3}  HCC operating point (FPF {:.3}, TPF {:.3})",
            s.reader_id,
            s.metrics.accuracy.unwrap_or(0.0),
            s.metrics.mean_f1.unwrap_or(0.0),
            fpf,
            tpf
        );
    }
    Ok(())
}

fn cmd_report(out: &Path) -> Result<()> {
    let report = load_metrics(out)?;
    let text = render_report(&report);
    std::fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, out } => cmd_gen(&common, &out),
        Command::Detect { common, data, out } => cmd_detect(&common, &data, &out),
        Command::Fuse { common, data, boxes, out } => cmd_fuse(&common, &data, &boxes, &out),
        Command::Classify { common, data, out, rois, model, replay } => {
            cmd_classify(&common, &data, &out, rois.as_deref(), model.as_deref(), replay.as_deref())
        }
        Command::Pipeline { common, data, out, strict_lroc, boxes } => {
            cmd_pipeline(&common, data.as_deref(), &out, strict_lroc, boxes.as_deref())
        }
        Command::Readers { common, data, out, readers, synthetic, lroc } => {
            cmd_readers(&common, &data, &out, readers.as_deref(), &synthetic, lroc.as_deref())
        }
        Command::Report { out } => cmd_report(&out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
