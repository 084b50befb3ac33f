use serde::{Deserialize, Serialize};

use super::confusion::ConfusionMatrix;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// No sample was predicted as this class, so precision is reported as 0.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(invalid!("classification report of an empty confusion matrix"));
    }
    let per_class = (0..cm.k())
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted = cm.col_sum(c);
            let support = cm.row_sum(c);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                name: cm.classes[c].clone(),
                precision,
                recall,
                f1,
                support,
                precision_undefined: predicted == 0,
            }
        })
        .collect();
    Ok(ClassificationReport {
        per_class,
        accuracy: ratio(cm.trace(), total),
        total,
    })
}

/// Rounds half-up to two decimals for display. Values within 1e-9 of a
/// half step are treated as sitting on it.
pub fn round2(x: f64) -> f64 {
    let scaled = x.abs() * 100.0;
    x.signum() * (scaled + 0.5 + 1e-9).floor() / 100.0
}

pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}
