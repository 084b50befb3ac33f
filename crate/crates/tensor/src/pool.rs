//! Spatial pooling and nearest-neighbour upsampling.

use ndarray::IxDyn;

use crate::conv::conv_out_dim;
use crate::error::{shape_err, Result};
use crate::graph::{Op, Tensor, Var};

fn dims4(op: &'static str, v: &Var) -> Result<(usize, usize, usize, usize)> {
    match v.shape() {
        &[n, c, h, w] => Ok((n, c, h, w)),
        other => Err(shape_err(op, format!("expected NCHW, got {other:?}"))),
    }
}

impl Var {
    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("max_pool2d", self)?;
        let (Some(oh), Some(ow)) = (
            conv_out_dim(h, kernel, stride, padding),
            conv_out_dim(w, kernel, stride, padding),
        ) else {
            return Err(shape_err("max_pool2d", format!("kernel {kernel} on {h}x{w}")));
        };
        let x = self.value().as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if xs[idx] > best || (xs[idx].is_nan() && !best.is_nan()) || best_idx == usize::MAX {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let value = Tensor::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).expect("pool out");
        Ok(Var::from_op(
            value,
            Op::MaxPool {
                input: self.clone(),
                argmax,
            },
        ))
    }

    /// Average pooling without padding.
    pub fn avg_pool2d(&self, kernel: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("avg_pool2d", self)?;
        let (Some(oh), Some(ow)) = (conv_out_dim(h, kernel, stride, 0), conv_out_dim(w, kernel, stride, 0)) else {
            return Err(shape_err("avg_pool2d", format!("kernel {kernel} on {h}x{w}")));
        };
        let x = self.value().as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let area = (kernel * kernel) as f64;
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        acc += xs[row..row + kernel].iter().sum::<f64>();
                    }
                    out[(plane * oh + oy) * ow + ox] = acc / area;
                }
            }
        }
        let value = Tensor::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).expect("pool out");
        Ok(Var::from_op(
            value,
            Op::AvgPool {
                input: self.clone(),
                kernel,
                stride,
            },
        ))
    }

    /// Nearest-neighbour ×2 upsampling cropped to `(out_h, out_w)`.
    ///
    /// Requires `H == ceil(out_h / 2)` and `W == ceil(out_w / 2)`, so that
    /// output pixel `(y, x)` reads input `(y / 2, x / 2)`.
    pub fn upsample2x_to(&self, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("upsample2x", self)?;
        if h != out_h.div_ceil(2) || w != out_w.div_ceil(2) {
            return Err(shape_err(
                "upsample2x",
                format!("{h}x{w} is not a factor-2 reduction of {out_h}x{out_w}"),
            ));
        }
        let x = self.value().as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * c * out_h * out_w];
        for plane in 0..n * c {
            for y in 0..out_h {
                for xx in 0..out_w {
                    out[(plane * out_h + y) * out_w + xx] = xs[(plane * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::from_shape_vec(IxDyn(&[n, c, out_h, out_w]), out).expect("upsample out");
        Ok(Var::from_op(value, Op::Upsample2x(self.clone())))
    }
}

pub(crate) fn max_pool_backward(input: &Tensor, argmax: &[usize], grad: &Tensor) -> Tensor {
    let mut dx = vec![0.0; input.len()];
    let g = grad.as_standard_layout();
    for (&idx, &gv) in argmax.iter().zip(g.as_slice().expect("standard layout")) {
        if idx != usize::MAX {
            dx[idx] += gv;
        }
    }
    Tensor::from_shape_vec(input.raw_dim(), dx).expect("dx")
}

pub(crate) fn avg_pool_backward(input: &Tensor, kernel: usize, stride: usize, grad: &Tensor) -> Tensor {
    let sh = input.shape();
    let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let gsh = grad.shape();
    let (oh, ow) = (gsh[2], gsh[3]);
    let g = grad.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let area = (kernel * kernel) as f64;
    let mut dx = vec![0.0; input.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gs[(plane * oh + oy) * ow + ox] / area;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    dx[row..row + kernel].iter_mut().for_each(|d| *d += gv);
                }
            }
        }
    }
    Tensor::from_shape_vec(input.raw_dim(), dx).expect("dx")
}

pub(crate) fn upsample2x_backward(input: &Tensor, grad: &Tensor) -> Tensor {
    let sh = input.shape();
    let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let (oh, ow) = (grad.shape()[2], grad.shape()[3]);
    let g = grad.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let mut dx = vec![0.0; input.len()];
    for plane in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                dx[(plane * h + y / 2) * w + x / 2] += gs[(plane * oh + y) * ow + x];
            }
        }
    }
    Tensor::from_shape_vec(input.raw_dim(), dx).expect("dx")
}
