//! Flat `key = value` configuration files with dotted section names.
//!
//! ```text
//! # comment
//! seed = 7
//! gen.n_hcc = 100
//! gen.noise_std = 0.05
//! gen.HCC.T1WI_A.mean = 0.35
//! detector.response_threshold = 6
//! detector.T2WI.sigma_large = 4
//! classifier.mc_passes = 100
//! eval.localization_rule = any_roi
//! ```
//!
//! Unknown keys are errors. `detector.<param>` applies to every sequence;
//! `detector.<SEQ>.<param>` to one.

use std::path::Path;
use std::str::FromStr;

use crate::detect::DetectorParams;
use crate::error::{Error, Result};
use crate::model::{LesionClass, LocalizationRule, PipelineConfig, SequenceKind};
use crate::synth::GenSpec;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub gen: GenSpec,
    pub pipeline: PipelineConfig,
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn triple<T: FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::config(key, "expected three values"))
}

fn apply_detector(p: &mut DetectorParams, key: &str, param: &str, value: &str) -> Result<bool> {
    match param {
        "sigma_small" => p.dog_sigma_small = num(key, value)?,
        "sigma_large" => p.dog_sigma_large = num(key, value)?,
        "response_threshold" => p.response_threshold = num(key, value)?,
        "noise_floor" => p.noise_floor = num(key, value)?,
        "min_area" => p.min_area = num(key, value)?,
        "w_primary" => p.channel_weights.0 = num(key, value)?,
        "w_secondary" => p.channel_weights.1 = num(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_gen(g: &mut GenSpec, key: &str, rest: &str, value: &str) -> Result<bool> {
    match rest {
        "n_hcc" => g.n_per_class[0] = num(key, value)?,
        "n_icc" => g.n_per_class[1] = num(key, value)?,
        "n_meta" | "n_metastasis" => g.n_per_class[2] = num(key, value)?,
        "dims" => g.dims = triple(key, value)?,
        "spacing" => g.spacing = triple(key, value)?,
        "noise_std" => g.noise_std = num(key, value)?,
        "background_level" => g.background_level = num(key, value)?,
        "seed" => g.seed = num(key, value)?,
        _ => {
            let parts: Vec<&str> = rest.split('.').collect();
            let Some(class) = parts.first().and_then(|c| c.parse::<LesionClass>().ok()) else {
                return Ok(false);
            };
            let sig = &mut g.signatures[class.index()];
            match parts[1..] {
                ["count_min"] => sig.lesion_count.0 = num(key, value)?,
                ["count_max"] => sig.lesion_count.1 = num(key, value)?,
                ["radius_min_mm"] => sig.radius_mm.0 = num(key, value)?,
                ["radius_max_mm"] => sig.radius_mm.1 = num(key, value)?,
                [seq, stat] => {
                    let Ok(kind) = seq.parse::<SequenceKind>() else { return Ok(false) };
                    match stat {
                        "mean" => sig.offsets[kind].0 = num(key, value)?,
                        "std" => sig.offsets[kind].1 = num(key, value)?,
                        _ => return Ok(false),
                    }
                }
                _ => return Ok(false),
            }
        }
    }
    Ok(true)
}

fn apply(cfg: &mut ConfigFile, key: &str, value: &str) -> Result<bool> {
    let p = &mut cfg.pipeline;
    let (section, rest) = key.split_once('.').unwrap_or((key, ""));
    match (section, rest) {
        ("seed", "") => p.seed = num(key, value)?,
        ("gen", rest) => return apply_gen(&mut cfg.gen, key, rest, value),
        ("roi", "conf_threshold") => p.roi_conf_threshold = num(key, value)?,
        ("roi", "keep_fraction") => p.keyroi_keep_fraction = num(key, value)?,
        ("classifier", "dropout_rate") => p.dropout_rate = num(key, value)?,
        ("classifier", "mc_passes") => p.mc_passes = num(key, value)?,
        ("classifier", "learning_rate") => p.train.learning_rate = num(key, value)?,
        ("classifier", "momentum") => p.train.momentum = num(key, value)?,
        ("classifier", "epochs") => p.train.epochs = num(key, value)?,
        ("classifier", "batch_size") => p.train.batch_size = num(key, value)?,
        ("eval", "folds") => p.folds = num(key, value)?,
        ("eval", "val_fraction") => p.val_fraction = num(key, value)?,
        ("eval", "localization_rule") => {
            p.localization_rule = match value {
                "center_in_truth_box" => LocalizationRule::CenterInTruthBox,
                "any_roi" => LocalizationRule::AnyRoi,
                _ => return Err(Error::config(key, format!("unknown rule `{value}`"))),
            }
        }
        ("detector", rest) => {
            if let Some((seq, param)) = rest.split_once('.') {
                let Ok(kind) = seq.parse::<SequenceKind>() else { return Ok(false) };
                return apply_detector(&mut p.detector[kind], key, param, value);
            }
            let mut any = false;
            for kind in SequenceKind::ALL {
                any |= apply_detector(&mut p.detector[kind], key, rest, value)?;
            }
            return Ok(any);
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses config text on top of the defaults and validates the result.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("line {}", lineno + 1), "expected `key = value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        if !apply(&mut cfg, key, value)? {
            return Err(Error::config(key, "unknown key"));
        }
    }
    cfg.gen.validate()?;
    cfg.pipeline.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("# nothing\n\n").unwrap(), ConfigFile::default());
    }

    #[test]
    fn keys_are_applied() {
        let cfg = parse_config(
            "seed = 9\ngen.n_hcc = 3\ngen.dims = 32 32 8\ngen.ICC.T2WI.mean = 0.5\n\
             detector.min_area = 7\ndetector.DWI.sigma_large = 6.5\neval.localization_rule = any_roi\n",
        )
        .unwrap();
        assert_eq!(cfg.pipeline.seed, 9);
        assert_eq!(cfg.gen.n_per_class[0], 3);
        assert_eq!(cfg.gen.dims, [32, 32, 8]);
        assert_eq!(cfg.gen.signatures[1].offsets[SequenceKind::T2WI].0, 0.5);
        assert!(cfg.pipeline.detector.iter().all(|(_, p)| p.min_area == 7));
        assert_eq!(cfg.pipeline.detector[SequenceKind::DWI].dog_sigma_large, 6.5);
        assert_eq!(cfg.pipeline.detector[SequenceKind::T1WI].dog_sigma_large, 5.0);
        assert_eq!(cfg.pipeline.localization_rule, LocalizationRule::AnyRoi);
    }

    #[test]
    fn unknown_and_invalid_keys_name_the_field() {
        match parse_config("gen.nosie_std = 1") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "gen.nosie_std"),
            other => panic!("{other:?}"),
        }
        match parse_config("gen.noise_std = -1") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "noise_std"),
            other => panic!("{other:?}"),
        }
        assert!(parse_config("classifier.mc_passes = many").is_err());
    }
}
