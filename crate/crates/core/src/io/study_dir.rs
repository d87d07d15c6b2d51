//! On-disk study format: one directory per study holding `manifest.json`,
//! `truth.json` and one raw little-endian `f32` volume per sequence
//! (x fastest, then y, then z).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::model::{validate_study, LesionClass, SequenceKind, Study, TruthBox, Volume};

pub const MANIFEST: &str = "manifest.json";
pub const TRUTH: &str = "truth.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    id: String,
    dims: [usize; 3],
    spacing: [f64; 3],
    class: LesionClass,
    sequences: BTreeMap<SequenceKind, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthFile {
    boxes: Vec<TruthBox>,
}

fn raw_name(kind: SequenceKind) -> String {
    format!("{kind}.raw")
}

pub fn write_study(dir: &Path, study: &Study) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        id: study.id.clone(),
        dims: study.dims(),
        spacing: study.spacing(),
        class: study.truth_class,
        sequences: SequenceKind::ALL.into_iter().map(|k| (k, raw_name(k))).collect(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    write_json(&dir.join(TRUTH), &TruthFile { boxes: study.truth_boxes.clone() })?;
    for (kind, vol) in &study.volumes {
        let bytes: Vec<u8> = vol.voxels.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(raw_name(*kind)), bytes)?;
    }
    Ok(())
}

pub fn write_cohort(out: &Path, studies: &[Study]) -> Result<()> {
    for s in studies {
        write_study(&out.join(&s.id), s)?;
    }
    Ok(())
}

pub fn read_study(dir: &Path) -> Result<Study> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let truth: TruthFile = read_json(&dir.join(TRUTH))?;
    let mut volumes = BTreeMap::new();
    for (kind, file) in &manifest.sequences {
        let path = dir.join(file);
        let bytes = fs::read(&path)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::format(&path, "length is not a multiple of 4 bytes"));
        }
        let voxels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let vol = Volume::new(manifest.dims, manifest.spacing, voxels)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        volumes.insert(*kind, vol);
    }
    let study = Study {
        id: manifest.id,
        volumes,
        truth_class: manifest.class,
        truth_boxes: truth.boxes,
    };
    let problems = validate_study(&study);
    if !problems.is_empty() {
        return Err(Error::format(dir, problems.join("; ")));
    }
    Ok(study)
}

/// Study subdirectories of `data`, sorted by name.
pub fn list_study_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(data, "no study directories found"));
    }
    Ok(dirs)
}

/// Metadata of a study without its volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyHeader {
    pub id: String,
    pub class: LesionClass,
    pub truth_boxes: Vec<TruthBox>,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

/// Reads manifest and truth boxes only.
pub fn read_study_header(dir: &Path) -> Result<StudyHeader> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let truth: TruthFile = read_json(&dir.join(TRUTH))?;
    Ok(StudyHeader {
        id: manifest.id,
        class: manifest.class,
        truth_boxes: truth.boxes,
        dims: manifest.dims,
        spacing: manifest.spacing,
    })
}
