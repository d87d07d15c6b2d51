//! Categorical metrics with localization-failure accounting.

use serde::{Deserialize, Serialize};

use crate::model::LesionClass;

/// One study's truth and categorical decision; `predicted = None` marks a
/// localization failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub truth: LesionClass,
    pub predicted: Option<LesionClass>,
}

/// One-vs-others table for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let sensitivity = ratio(tp, tp + fn_);
        let precision = ratio(tp, tp + fp);
        let f1 = if precision + sensitivity == 0.0 {
            0.0
        } else {
            2.0 * precision * sensitivity / (precision + sensitivity)
        };
        ClassMetrics {
            sensitivity,
            specificity: ratio(tn, tn + fp),
            precision,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// HCC-vs-others style operating point `(FPF, TPF)`.
    pub fn operating_point(&self) -> (f64, f64) {
        (1.0 - self.specificity, self.sensitivity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalMetrics {
    pub n: usize,
    /// `None` for an empty set.
    pub accuracy: Option<f64>,
    /// Unweighted mean of the three per-class F1 scores; `None` for an empty set.
    pub mean_f1: Option<f64>,
    pub per_class: [ClassMetrics; 3],
    pub localization_failures: usize,
}

/// Accuracy, macro F1 and one-vs-others tables.
///
/// A localization failure is wrong for accuracy, a false negative for its
/// true class, and a true negative for the other two classes.
pub fn categorical_metrics(outcomes: &[Outcome]) -> CategoricalMetrics {
    let n = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.predicted == Some(o.truth)).count();
    let per_class = LesionClass::ALL.map(|c| {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for o in outcomes {
            let positive = o.truth == c;
            let called = o.predicted == Some(c);
            match (positive, called) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
        ClassMetrics::from_counts(tp, fp, tn, fn_)
    });
    let (accuracy, mean_f1) = if n == 0 {
        (None, None)
    } else {
        (
            Some(correct as f64 / n as f64),
            Some(per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0),
        )
    };
    CategoricalMetrics {
        n,
        accuracy,
        mean_f1,
        per_class,
        localization_failures: outcomes.iter().filter(|o| o.predicted.is_none()).count(),
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanSd { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        MeanSd { mean, sd }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use LesionClass::*;

    fn o(t: LesionClass, p: Option<LesionClass>) -> Outcome {
        Outcome { truth: t, predicted: p }
    }

    #[test]
    fn hand_computed_example() {
        let m = categorical_metrics(&[
            o(Hcc, Some(Hcc)),
            o(Hcc, Some(Icc)),
            o(Icc, Some(Icc)),
            o(Metastasis, Some(Metastasis)),
        ]);
        assert_eq!(m.accuracy, Some(0.75));
        let h = m.per_class[0];
        assert_eq!((h.sensitivity, h.specificity), (0.5, 1.0));
        assert!((h.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_correct() {
        let m = categorical_metrics(&[o(Hcc, Some(Hcc)), o(Icc, Some(Icc)), o(Metastasis, Some(Metastasis))]);
        assert_eq!(m.accuracy, Some(1.0));
        assert!(m.per_class.iter().all(|c| c.f1 == 1.0));
        assert_eq!(m.mean_f1, Some(1.0));
    }

    #[test]
    fn localization_failure_is_false_negative() {
        let m = categorical_metrics(&[o(Hcc, None)]);
        assert_eq!(m.accuracy, Some(0.0));
        assert_eq!(m.per_class[0].sensitivity, 0.0);
        assert_eq!(m.per_class[0].fn_, 1);
        assert_eq!(m.per_class[1].tn, 1);
        assert_eq!(m.localization_failures, 1);
    }

    #[test]
    fn empty_set_is_undefined() {
        let m = categorical_metrics(&[]);
        assert_eq!(m.accuracy, None);
        assert_eq!(m.mean_f1, None);
    }

    #[test]
    fn population_sd() {
        let s = MeanSd::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.sd), (2.0, 1.0));
    }
}
