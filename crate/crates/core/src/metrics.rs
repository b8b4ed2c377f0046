//! Confusion counts, per-class F1 and macro-F1, and fold aggregation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ClassId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truth} ground-truth labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("label {0} is not in the class set")]
    UnknownLabel(ClassId),
    #[error("no values to aggregate")]
    Empty,
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, zero when nothing was predicted or present.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: BTreeMap<ClassId, ClassCounts>,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn correct(&self) -> u64 {
        self.per_class.values().map(|c| c.tp).sum()
    }
}

pub fn confusion(
    predictions: &[ClassId],
    truth: &[ClassId],
    classes: &BTreeSet<ClassId>,
) -> Result<ConfusionCounts, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    if let Some(&bad) = predictions
        .iter()
        .chain(truth)
        .find(|l| !classes.contains(l))
    {
        return Err(MetricsError::UnknownLabel(bad));
    }
    let total = truth.len() as u64;
    let mut per_class: BTreeMap<ClassId, ClassCounts> = classes
        .iter()
        .map(|&c| (c, ClassCounts::default()))
        .collect();
    for (&p, &t) in predictions.iter().zip(truth) {
        if p == t {
            per_class.get_mut(&p).unwrap().tp += 1;
        } else {
            per_class.get_mut(&p).unwrap().fp += 1;
            per_class.get_mut(&t).unwrap().fn_ += 1;
        }
    }
    for c in per_class.values_mut() {
        c.tn = total - c.tp - c.fp - c.fn_;
    }
    Ok(ConfusionCounts { per_class, total })
}

pub fn f1(counts: &ClassCounts) -> f64 {
    counts.f1()
}

/// Unweighted mean of per-class F1. An empty class set scores 0.
pub fn macro_f1(counts: &ConfusionCounts) -> f64 {
    if counts.per_class.is_empty() {
        return 0.0;
    }
    counts.per_class.values().map(ClassCounts::f1).sum::<f64>() / counts.per_class.len() as f64
}

/// Per-fold macro-F1 with mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResults {
    pub folds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(folds: &[f64]) -> Result<FoldResults, MetricsError> {
    if folds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = folds.len() as f64;
    let mean = folds.iter().sum::<f64>() / n;
    let var = folds.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // keep the mean inside [min, max] despite rounding
    let lo = folds.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = folds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FoldResults {
        folds: folds.to_vec(),
        mean: mean.clamp(lo, hi),
        std: if lo == hi { 0.0 } else { Float::sqrt(var) },
    })
}
