use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Per-dimension standardisation fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for zero-variance dimensions.
    pub std: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

pub fn fit_scaler(x: ArrayView2<f64>) -> Result<ScalerStats> {
    if x.nrows() < 2 {
        return Err(invalid!("scaler needs at least 2 rows, got {}", x.nrows()));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let var = x.var_axis(Axis(0), 0.0);
    let zero_variance: Vec<bool> = var.iter().map(|&v| v <= 0.0).collect();
    let std = var
        .iter()
        .zip(&zero_variance)
        .map(|(&v, &z)| if z { 1.0 } else { v.sqrt() })
        .collect();
    Ok(ScalerStats {
        mean,
        std,
        zero_variance,
    })
}

impl ScalerStats {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dims() {
            return Err(invalid!("scaler fitted on {} dims, got {}", self.dims(), x.ncols()));
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}
