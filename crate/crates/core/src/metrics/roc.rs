use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One-vs-rest ROC curve for a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct threshold.
    pub points: Vec<(f64, f64)>,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
    pub positives: u64,
    pub negatives: u64,
}

/// Threshold sweep over descending scores. Tied scores move as one step,
/// which credits ties with one half, and the trapezoid area is accumulated
/// in integers before a single division.
pub fn roc_auc_ovr(y_true: &[usize], scores: ArrayView2<f64>, class: usize) -> Result<RocCurve> {
    if scores.nrows() != y_true.len() {
        return Err(invalid!("{} score rows for {} labels", scores.nrows(), y_true.len()));
    }
    if class >= scores.ncols() {
        return Err(invalid!("class {class} out of range for {} score columns", scores.ncols()));
    }
    let col = scores.column(class);
    if col.iter().any(|s| !s.is_finite()) {
        return Err(invalid!("non-finite score for class {class}"));
    }
    let mut order: Vec<usize> = (0..y_true.len()).collect();
    order.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
    let pos = y_true.iter().filter(|&&y| y == class).count() as u64;
    let neg = y_true.len() as u64 - pos;

    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2: u128 = 0;
    let mut counts = vec![(0u64, 0u64)];
    let mut i = 0;
    while i < order.len() {
        let s = col[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && col[order[i]] == s {
            if y_true[order[i]] == class {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        counts.push((fp, tp));
    }
    let norm = |v: u64, d: u64| if d == 0 { 0.0 } else { v as f64 / d as f64 };
    let points = counts.iter().map(|&(f, t)| (norm(f, neg), norm(t, pos))).collect();
    let auc = (pos > 0 && neg > 0).then(|| area2 as f64 / (2 * pos as u128 * neg as u128) as f64);
    Ok(RocCurve {
        class,
        points,
        auc,
        positives: pos,
        negatives: neg,
    })
}
