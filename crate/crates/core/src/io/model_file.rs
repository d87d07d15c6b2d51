//! Versioned text format for trained classifiers.
//!
//! One `key values...` record per line; floats use Rust's shortest
//! round-trip formatting so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::classify::mlp::{Dense, Mlp, MlpModel, Standardizer};
use crate::error::{Error, Result};
use crate::model::TrainParams;

const MAGIC: &str = "lesion-cad-mlp";
const VERSION: u32 = 1;

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn model_to_string(m: &MlpModel) -> String {
    let mut s = String::new();
    let sizes = m.net.sizes();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "sizes {}", sizes.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
    let _ = writeln!(s, "dropout_rate {}", m.dropout_rate);
    let _ = writeln!(s, "learning_rate {}", m.train.learning_rate);
    let _ = writeln!(s, "momentum {}", m.train.momentum);
    let _ = writeln!(s, "epochs {}", m.train.epochs);
    let _ = writeln!(s, "batch_size {}", m.train.batch_size);
    let _ = writeln!(s, "seed {}", m.seed);
    let _ = writeln!(s, "final_loss {}", m.final_loss);
    let _ = writeln!(s, "scaler_mean {}", join(&m.scaler.mean));
    let _ = writeln!(s, "scaler_std {}", join(&m.scaler.std));
    for (i, l) in m.net.layers.iter().enumerate() {
        let _ = writeln!(s, "weights{i} {}", join(&l.weights));
        let _ = writeln!(s, "biases{i} {}", join(&l.biases));
    }
    s
}

pub fn model_from_str(text: &str, origin: &str) -> Result<MlpModel> {
    let bad = |reason: String| Error::format(origin, reason);
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != format!("{MAGIC} {VERSION}") {
        return Err(bad(format!("unsupported header `{header}`")));
    }
    let mut fields = std::collections::BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
    let floats = |k: &str| -> Result<Vec<f64>> {
        get(k)?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number in `{k}`"))))
            .collect()
    };
    let scalar = |k: &str| -> Result<f64> {
        get(k)?.trim().parse().map_err(|_| bad(format!("bad `{k}`")))
    };
    let sizes: Vec<usize> = get("sizes")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad layer size".into())))
        .collect::<Result<_>>()?;
    if sizes.len() < 2 {
        return Err(bad("need at least two layer sizes".into()));
    }
    let mut layers = Vec::new();
    for (i, w) in sizes.windows(2).enumerate() {
        let weights = floats(&format!("weights{i}"))?;
        let biases = floats(&format!("biases{i}"))?;
        if weights.len() != w[0] * w[1] || biases.len() != w[1] {
            return Err(bad(format!("layer {i} has the wrong number of parameters")));
        }
        layers.push(Dense { inputs: w[0], outputs: w[1], weights, biases });
    }
    let scaler = Standardizer { mean: floats("scaler_mean")?, std: floats("scaler_std")? };
    if scaler.mean.len() != sizes[0] || scaler.std.len() != sizes[0] {
        return Err(bad("scaler length does not match input size".into()));
    }
    Ok(MlpModel {
        net: Mlp { layers },
        scaler,
        dropout_rate: scalar("dropout_rate")?,
        train: TrainParams {
            learning_rate: scalar("learning_rate")?,
            momentum: scalar("momentum")?,
            epochs: scalar("epochs")? as usize,
            batch_size: scalar("batch_size")? as usize,
        },
        seed: get("seed")?.trim().parse().map_err(|_| bad("bad `seed`".into()))?,
        final_loss: scalar("final_loss")?,
    })
}

pub fn save_model(path: &Path, m: &MlpModel) -> Result<()> {
    std::fs::write(path, model_to_string(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    model_from_str(&std::fs::read_to_string(path)?, &path.display().to_string())
}
