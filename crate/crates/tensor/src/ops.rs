//! Elementwise, reduction, dense and normalization ops.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Ix2, Ix4, IxDyn, Zip};

use crate::error::{shape_err, Result};
use crate::graph::{BnSaved, Op, Tensor, Var};

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn as_4d(op: &'static str, v: &Var) -> Result<[usize; 4]> {
    match v.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        other => Err(shape_err(op, format!("expected NCHW input, got {other:?}"))),
    }
}

impl Var {
    pub fn add(&self, other: &Var) -> Result<Var> {
        same_shape("add", self, other)?;
        let value = self.value() + other.value();
        Ok(Var::from_op(value, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        same_shape("sub", self, other)?;
        let value = self.value() - other.value();
        Ok(Var::from_op(value, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        same_shape("mul", self, other)?;
        let value = self.value() * other.value();
        Ok(Var::from_op(value, Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value() * c, Op::Scale(self.clone(), c))
    }

    /// Adds a constant broadcast to this var's shape.
    pub fn add_const(&self, c: &Tensor) -> Result<Var> {
        let c = broadcast_const("add_const", self, c)?;
        let value = self.value() + &c;
        Ok(Var::from_op(value, Op::AddConst(self.clone())))
    }

    /// Multiplies by a constant broadcast to this var's shape.
    pub fn mul_const(&self, c: &Tensor) -> Result<Var> {
        let c = broadcast_const("mul_const", self, c)?;
        let value = self.value() * &c;
        Ok(Var::from_op(value, Op::MulConst(self.clone(), c)))
    }

    pub fn relu(&self) -> Var {
        Var::from_op(
            self.value().mapv(|x| if x > 0.0 || x.is_nan() { x } else { 0.0 }),
            Op::Relu(self.clone()),
        )
    }

    pub fn relu6(&self) -> Var {
        Var::from_op(
            self.value().mapv(|x| x.clamp(0.0, 6.0)),
            Op::Relu6(self.clone()),
        )
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(self.value().mapv(sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn sum(&self) -> Var {
        let v = Tensor::from_elem(IxDyn(&[]), self.value().sum());
        Var::from_op(v, Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        let v = Tensor::from_elem(IxDyn(&[]), self.value().sum() / n);
        Var::from_op(v, Op::Mean(self.clone()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| shape_err("reshape", format!("{:?} -> {shape:?}: {e}", self.shape())))?;
        Ok(Var::from_op(value, Op::Reshape(self.clone())))
    }

    /// `x · Wᵀ + b` for `x: [N, D]`, `W: [O, D]`, `b: [O]`.
    pub fn linear(&self, weight: &Var, bias: Option<&Var>) -> Result<Var> {
        let x = to2(self.value(), "linear")?;
        let w = to2(weight.value(), "linear")?;
        if x.ncols() != w.ncols() {
            return Err(shape_err(
                "linear",
                format!("input {:?} vs weight {:?}", self.shape(), weight.shape()),
            ));
        }
        let mut y = x.dot(&w.t());
        if let Some(b) = bias {
            if b.shape() != [w.nrows()] {
                return Err(shape_err("linear", format!("bias {:?}", b.shape())));
            }
            let b1 = b.value().view().into_dimensionality::<ndarray::Ix1>().expect("checked 1-d");
            y += &b1;
        }
        Ok(Var::from_op(
            y.into_dyn(),
            Op::Linear {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
            },
        ))
    }

    /// Row-wise softmax of a `[N, K]` matrix.
    pub fn softmax(&self) -> Result<Var> {
        let x = to2(self.value(), "softmax")?;
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row /= z;
        }
        Ok(Var::from_op(y.into_dyn(), Op::Softmax(self.clone())))
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self) -> Result<Var> {
        let [n, c, h, w] = as_4d("global_avg_pool", self)?;
        let x = self.value().view().into_dimensionality::<Ix4>().expect("checked 4-d");
        let hw = (h * w) as f64;
        let mut out = Array2::<f64>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                out[[ni, ci]] = x.slice(s![ni, ci, .., ..]).sum() / hw;
            }
        }
        Ok(Var::from_op(out.into_dyn(), Op::GlobalAvgPool(self.clone())))
    }

    /// Scales each channel of `[N, C, H, W]` by `gate: [N, C]`.
    pub fn channel_scale(&self, gate: &Var) -> Result<Var> {
        let [n, c, _, _] = as_4d("channel_scale", self)?;
        if gate.shape() != [n, c] {
            return Err(shape_err(
                "channel_scale",
                format!("input {:?} gate {:?}", self.shape(), gate.shape()),
            ));
        }
        let g = gate.value().view().into_dimensionality::<Ix2>().expect("checked 2-d");
        let mut out = self.value().clone().into_dimensionality::<Ix4>().expect("checked 4-d");
        for ni in 0..n {
            for ci in 0..c {
                let gv = g[[ni, ci]];
                out.slice_mut(s![ni, ci, .., ..]).mapv_inplace(|v| v * gv);
            }
        }
        Ok(Var::from_op(
            out.into_dyn(),
            Op::ChannelScale {
                input: self.clone(),
                gate: gate.clone(),
            },
        ))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let [n, _, h, w] = as_4d("concat", first)?;
        let mut total = 0;
        for p in parts {
            let [pn, pc, ph, pw] = as_4d("concat", p)?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err(
                    "concat",
                    format!("{:?} vs {:?}", first.shape(), p.shape()),
                ));
            }
            total += pc;
        }
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let value = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| shape_err("concat", e.to_string()))?;
        debug_assert_eq!(value.shape()[1], total);
        Ok(Var::from_op(value, Op::Concat(parts.to_vec())))
    }

    /// Batch normalization over `[N, C, H, W]`.
    ///
    /// With `batch_stats` the statistics come from this batch and the biased
    /// batch mean and variance are returned for running-average updates;
    /// otherwise `running` supplies them.
    pub fn batch_norm(
        &self,
        gamma: &Var,
        beta: &Var,
        running: Option<(&Tensor, &Tensor)>,
        eps: f64,
    ) -> Result<(Var, Option<(Array1<f64>, Array1<f64>)>)> {
        let [n, c, h, w] = as_4d("batch_norm", self)?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(shape_err(
                "batch_norm",
                format!("{c} channels, gamma {:?}, beta {:?}", gamma.shape(), beta.shape()),
            ));
        }
        let x = self.value().view().into_dimensionality::<Ix4>().expect("checked 4-d");
        let m = (n * h * w) as f64;
        let (mean, var, batch_stats) = match running {
            Some((rm, rv)) => {
                if rm.shape() != [c] || rv.shape() != [c] {
                    return Err(shape_err("batch_norm", "running stats shape"));
                }
                (
                    rm.iter().copied().collect::<Array1<f64>>(),
                    rv.iter().copied().collect::<Array1<f64>>(),
                    false,
                )
            }
            None => {
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ci in 0..c {
                    let ch = x.slice(s![.., ci, .., ..]);
                    let mu = ch.sum() / m;
                    let v = ch.fold(0.0, |acc, &val| acc + (val - mu) * (val - mu)) / m;
                    mean[ci] = mu;
                    var[ci] = v;
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = x.to_owned();
        let mut y = x.to_owned();
        let gv = gamma.value();
        let bv = beta.value();
        for ci in 0..c {
            let (mu, is) = (mean[ci], inv_std[ci]);
            let (g, b) = (gv[[ci]], bv[[ci]]);
            Zip::from(xhat.slice_mut(s![.., ci, .., ..]))
                .and(y.slice_mut(s![.., ci, .., ..]))
                .for_each(|xh, yy| {
                    let v = (*xh - mu) * is;
                    *xh = v;
                    *yy = g * v + b;
                });
        }
        let out = Var::from_op(
            y.into_dyn(),
            Op::BatchNorm {
                input: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                saved: BnSaved {
                    xhat: xhat.into_dyn(),
                    inv_std,
                    batch_stats,
                },
            },
        );
        Ok((out, batch_stats.then_some((mean, var))))
    }

    /// Picks elements by flat (row-major) index into a 1-d var.
    pub fn gather(&self, indices: &[usize]) -> Result<Var> {
        let len = self.value().len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(shape_err("gather", format!("index {bad} out of {len}")));
        }
        let std = self.value().as_standard_layout();
        let flat = std.as_slice().expect("standard layout");
        let out: Vec<f64> = indices.iter().map(|&i| flat[i]).collect();
        let value = Tensor::from_shape_vec(IxDyn(&[indices.len()]), out).expect("1-d");
        Ok(Var::from_op(
            value,
            Op::Gather {
                input: self.clone(),
                indices: indices.to_vec(),
            },
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_const(op: &'static str, v: &Var, c: &Tensor) -> Result<Tensor> {
    c.broadcast(IxDyn(v.shape()))
        .map(|b| b.to_owned())
        .ok_or_else(|| shape_err(op, format!("cannot broadcast {:?} to {:?}", c.shape(), v.shape())))
}

fn to2<'a>(t: &'a Tensor, op: &'static str) -> Result<ArrayView2<'a, f64>> {
    t.view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| shape_err(op, format!("expected a matrix, got {:?}", t.shape())))
}

pub(crate) fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    Zip::from(&mut g).and(x).for_each(|g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

pub(crate) fn relu6_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    Zip::from(&mut g).and(x).for_each(|g, &x| {
        if x <= 0.0 || x >= 6.0 {
            *g = 0.0;
        }
    });
    g
}

pub(crate) fn sigmoid_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    Zip::from(&mut g).and(out).for_each(|g, &s| *g *= s * (1.0 - s));
    g
}

pub(crate) fn linear_backward(
    input: &Var,
    weight: &Var,
    has_bias: bool,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let g = grad.view().into_dimensionality::<Ix2>().expect("linear grad is 2-d");
    let x = input.value().view().into_dimensionality::<Ix2>().expect("2-d");
    let w = weight.value().view().into_dimensionality::<Ix2>().expect("2-d");
    let mut out = vec![
        needs[0].then(|| g.dot(&w).into_dyn()),
        needs[1].then(|| g.t().dot(&x).into_dyn()),
    ];
    if has_bias {
        out.push(needs[2].then(|| g.sum_axis(Axis(0)).into_dyn()));
    }
    out
}

pub(crate) fn softmax_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    let s = out.view().into_dimensionality::<Ix2>().expect("2-d");
    let g = grad.view().into_dimensionality::<Ix2>().expect("2-d");
    let mut dx = Array2::zeros(s.raw_dim());
    for ((mut d, srow), grow) in dx.rows_mut().into_iter().zip(s.rows()).zip(g.rows()) {
        let dot: f64 = srow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
        Zip::from(&mut d)
            .and(&srow)
            .and(&grow)
            .for_each(|d, &sv, &gv| *d = sv * (gv - dot));
    }
    dx.into_dyn()
}

pub(crate) fn gap_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let sh = x.shape();
    let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let g = grad.view().into_dimensionality::<Ix2>().expect("2-d");
    let hw = (h * w) as f64;
    let mut dx = ndarray::Array4::<f64>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            dx.slice_mut(s![ni, ci, .., ..]).fill(g[[ni, ci]] / hw);
        }
    }
    dx.into_dyn()
}

pub(crate) fn channel_scale_backward(
    input: &Var,
    gate: &Var,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let x = input.value().view().into_dimensionality::<Ix4>().expect("4-d");
    let gt = gate.value().view().into_dimensionality::<Ix2>().expect("2-d");
    let g = grad.view().into_dimensionality::<Ix4>().expect("4-d");
    let (n, c) = (gt.nrows(), gt.ncols());
    let dx = needs[0].then(|| {
        let mut dx = g.to_owned();
        for ni in 0..n {
            for ci in 0..c {
                let gv = gt[[ni, ci]];
                dx.slice_mut(s![ni, ci, .., ..]).mapv_inplace(|v| v * gv);
            }
        }
        dx.into_dyn()
    });
    let dg = needs[1].then(|| {
        let mut dg = Array2::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                dg[[ni, ci]] = Zip::from(g.slice(s![ni, ci, .., ..]))
                    .and(x.slice(s![ni, ci, .., ..]))
                    .fold(0.0, |acc, &a, &b| acc + a * b);
            }
        }
        dg.into_dyn()
    });
    vec![dx, dg]
}

pub(crate) fn concat_backward(parts: &[Var], grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let mut offset = 0;
    parts
        .iter()
        .zip(needs)
        .map(|(p, &need)| {
            let c = p.shape()[1];
            let slice = need.then(|| grad.slice(s![.., offset..offset + c, .., ..]).to_owned().into_dyn());
            offset += c;
            slice
        })
        .collect()
}

pub(crate) fn batch_norm_backward(
    gamma: &Var,
    saved: &BnSaved,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let g = grad.view().into_dimensionality::<Ix4>().expect("4-d");
    let xhat = saved.xhat.view().into_dimensionality::<Ix4>().expect("4-d");
    let c = g.shape()[1];
    let m = (g.len() / c) as f64;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for ci in 0..c {
        Zip::from(g.slice(s![.., ci, .., ..]))
            .and(xhat.slice(s![.., ci, .., ..]))
            .for_each(|&gv, &xv| {
                sum_g[ci] += gv;
                sum_gx[ci] += gv * xv;
            });
    }
    let gm = gamma.value();
    let dx = needs[0].then(|| {
        let mut dx = g.to_owned();
        for ci in 0..c {
            let k = gm[[ci]] * saved.inv_std[ci];
            let (sg, sgx) = (sum_g[ci], sum_gx[ci]);
            Zip::from(dx.slice_mut(s![.., ci, .., ..]))
                .and(xhat.slice(s![.., ci, .., ..]))
                .for_each(|d, &xv| {
                    *d = if saved.batch_stats {
                        k * (*d - sg / m - xv * sgx / m)
                    } else {
                        k * *d
                    };
                });
        }
        dx.into_dyn()
    });
    let dgamma = needs[1].then(|| Array1::from(sum_gx.clone()).into_dyn());
    let dbeta = needs[2].then(|| Array1::from(sum_g.clone()).into_dyn());
    vec![dx, dgamma, dbeta]
}
