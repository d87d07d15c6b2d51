//! Class-stratified k-fold splitting with a validation carve-out.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LesionClass;
use crate::rng::stage_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Splits `cohort` into `folds` test folds, per class independently.
///
/// Each class is shuffled with a seeded stream and dealt round-robin into the
/// test folds. From the rest of each class, `val_fraction / (1 - 1/folds)` is
/// taken as validation (starting with the members of the following fold, so
/// validation sets rotate) and the remainder trains.
pub fn stratified_folds(
    cohort: &[(String, LesionClass)],
    folds: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    if folds < 2 {
        return Err(Error::Split(format!("need at least 2 folds, got {folds}")));
    }
    let mut by_class: BTreeMap<LesionClass, Vec<String>> = BTreeMap::new();
    for (id, c) in cohort {
        by_class.entry(*c).or_default().push(id.clone());
    }
    for c in LesionClass::ALL {
        let n = by_class.get(&c).map_or(0, Vec::len);
        if n < folds {
            return Err(Error::Split(format!("class {c} has {n} studies, fewer than {folds} folds")));
        }
    }
    let val_share = val_fraction / (1.0 - 1.0 / folds as f64);

    // dealt[c][f] = class c members whose test fold is f
    let dealt: BTreeMap<LesionClass, Vec<Vec<String>>> = by_class
        .into_iter()
        .map(|(c, mut ids)| {
            ids.sort();
            ids.shuffle(&mut stage_rng(seed, c.name(), "folds"));
            let mut bins = vec![Vec::new(); folds];
            for (i, id) in ids.into_iter().enumerate() {
                bins[i % folds].push(id);
            }
            (c, bins)
        })
        .collect();

    Ok((0..folds)
        .map(|f| {
            let mut split = FoldSplit { fold_index: f, train_ids: vec![], val_ids: vec![], test_ids: vec![] };
            for bins in dealt.values() {
                split.test_ids.extend(bins[f].iter().cloned());
                let rest: Vec<&String> = (1..folds).flat_map(|k| bins[(f + k) % folds].iter()).collect();
                // keep at least one training and (when possible) one validation study
                let n_val = ((rest.len() as f64 * val_share).round() as usize)
                    .max(1)
                    .min(rest.len().saturating_sub(1));
                split.val_ids.extend(rest[..n_val].iter().map(|s| (*s).clone()));
                split.train_ids.extend(rest[n_val..].iter().map(|s| (*s).clone()));
            }
            split
        })
        .collect())
}
