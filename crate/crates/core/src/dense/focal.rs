use lungxai_tensor::{CustomOp, Tensor, Var};
use ndarray::{ArrayView2, Ix2, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Probabilities are clipped into `[EPS, 1 − EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub alpha: Vec<f64>,
    pub gamma: f64,
}

impl FocalLossConfig {
    pub fn uniform(k: usize, gamma: f64) -> Self {
        Self {
            alpha: vec![1.0; k],
            gamma,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.alpha.len() != k {
            return Err(invalid!("focal alpha has {} entries for {k} classes", self.alpha.len()));
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid!("focal alpha must be positive: {:?}", self.alpha));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(invalid!("focal gamma must be non-negative, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Inverse class frequency, normalised to mean 1. Absent classes get 1.
pub fn inverse_frequency_alpha(counts: &[usize]) -> Vec<f64> {
    let inv: Vec<f64> = counts.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
    let present: Vec<f64> = inv.iter().copied().filter(|v| *v > 0.0).collect();
    if present.is_empty() {
        return vec![1.0; counts.len()];
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    inv.iter().map(|&v| if v > 0.0 { v / mean } else { 1.0 }).collect()
}

fn term(p: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -alpha * (1.0 - p).powf(gamma) * p.ln()
}

fn term_grad(p: f64, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    let q = 1.0 - p;
    let focus = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * p.ln() };
    alpha * (focus - q.powf(gamma) / p)
}

fn check(p: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &FocalLossConfig) -> Result<()> {
    if p.dim() != y.dim() {
        return Err(invalid!("probabilities {:?} and targets {:?} differ in shape", p.dim(), y.dim()));
    }
    cfg.validate(p.ncols())?;
    for (i, row) in p.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(invalid!("probability row {i} sums to {s}"));
        }
    }
    Ok(())
}

/// `mean_n Σ_k y_nk · (−α_k (1 − p_nk)^γ log p_nk)`.
pub fn focal_loss_value(p: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &FocalLossConfig) -> Result<f64> {
    check(p, y, cfg)?;
    if p.nrows() == 0 {
        return Err(invalid!("focal loss of an empty batch"));
    }
    let mut total = 0.0;
    for ((&pv, &yv), k) in p.iter().zip(y.iter()).zip((0..p.ncols()).cycle()) {
        if yv != 0.0 {
            total += yv * term(pv, cfg.alpha[k], cfg.gamma);
        }
    }
    Ok(total / p.nrows() as f64)
}

struct FocalOp {
    inputs: [Var; 1],
    targets: Tensor,
    alpha: Vec<f64>,
    gamma: f64,
}

impl CustomOp for FocalOp {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(&self, _output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let g = grad.iter().next().copied().unwrap_or(0.0);
        let p = self.inputs[0].value();
        let n = p.shape()[0] as f64;
        let k = p.shape()[1];
        let mut dp = Tensor::zeros(p.raw_dim());
        for (i, ((d, &pv), &yv)) in dp.iter_mut().zip(p.iter()).zip(self.targets.iter()).enumerate() {
            if yv != 0.0 {
                *d = g * yv * term_grad(pv, self.alpha[i % k], self.gamma) / n;
            }
        }
        vec![Some(dp)]
    }
}

/// Differentiable focal loss over a probability batch `[N, K]`.
pub fn focal_loss(p: &Var, y: ArrayView2<f64>, cfg: &FocalLossConfig) -> Result<Var> {
    let pv = p
        .value()
        .view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| invalid!("focal loss expects [N, K] probabilities, got {:?}", p.shape()))?;
    let value = focal_loss_value(pv, y, cfg)?;
    let op = FocalOp {
        inputs: [p.clone()],
        targets: y.to_owned().into_dyn(),
        alpha: cfg.alpha.clone(),
        gamma: cfg.gamma,
    };
    Ok(Var::from_custom(Tensor::from_elem(IxDyn(&[]), value), Box::new(op)))
}
