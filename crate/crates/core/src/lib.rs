//! Liver-lesion computer-aided diagnosis on synthetic multi-sequence MRI
//! phantoms: generation, detection, box fusion, MC-dropout classification
//! and LROC-style evaluation.

pub mod classify;
pub mod detect;
pub mod error;
pub mod eval;
pub mod fuse;
pub mod image;
pub mod io;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
