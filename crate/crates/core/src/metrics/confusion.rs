use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Counts with rows = true class and columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(invalid!("confusion counts must be {k}x{k}"));
        }
        Ok(Self { classes, counts })
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Relabels classes: new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            classes: perm.iter().map(|&p| self.classes[p].clone()).collect(),
            counts: perm
                .iter()
                .map(|&pi| perm.iter().map(|&pj| self.counts[pi][pj]).collect())
                .collect(),
        }
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: &[String]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(invalid!("{} true labels but {} predictions", y_true.len(), y_pred.len()));
    }
    let mut cm = ConfusionMatrix::zeros(classes.to_vec());
    let k = classes.len();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(invalid!("label pair ({t}, {p}) out of range for {k} classes"));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}
