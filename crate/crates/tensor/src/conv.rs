//! Grouped 2-d convolution via im2col and GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, IxDyn};

use crate::error::{shape_err, Result};
use crate::graph::{Op, Tensor, Var};

/// Stride, symmetric zero padding and group count of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

struct Dims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Dims {
    fn new(x: &[usize], wt: &[usize], geom: &ConvGeom) -> Result<Self> {
        let (&[n, cin, h, w], &[cout, cin_g, kh, kw]) = (x, wt) else {
            return Err(shape_err(
                "conv2d",
                format!("input {x:?} and weight {wt:?} must both be 4-d"),
            ));
        };
        let groups = geom.groups.max(1);
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(shape_err(
                "conv2d",
                format!("input {x:?}, weight {wt:?}, groups {groups}"),
            ));
        }
        let (Some(oh), Some(ow)) = (
            conv_out_dim(h, kh, geom.stride, geom.padding),
            conv_out_dim(w, kw, geom.stride, geom.padding),
        ) else {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w}"),
            ));
        };
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            cin_g,
            cout_g: cout / groups,
            stride: geom.stride,
            pad: geom.padding,
            groups,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn krows(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }
}

fn im2col(x: &[f64], d: &Dims, cols: &mut [f64]) {
    let (h, w, oh, ow) = (d.h, d.w, d.oh, d.ow);
    let plane = oh * ow;
    for c in 0..d.cin_g {
        let src = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        *o = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &Dims, dx: &mut [f64]) {
    let (h, w, oh, ow) = (d.h, d.w, d.oh, d.ow);
    let plane = oh * ow;
    for c in 0..d.cin_g {
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Var {
    /// 2-d convolution. `self: [N, Cin, H, W]`, `weight: [Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, geom: ConvGeom) -> Result<Var> {
        let d = Dims::new(self.shape(), weight.shape(), &geom)?;
        if let Some(b) = bias {
            if b.shape() != [d.cout] {
                return Err(shape_err("conv2d", format!("bias {:?}", b.shape())));
            }
        }
        let x = self.value().as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let wt = weight.value().as_standard_layout();
        let ws = wt.as_slice().expect("standard layout");
        let plane = d.oh * d.ow;
        let mut out = vec![0.0; d.n * d.cout * plane];
        let mut cols = if d.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; d.krows() * plane]
        };
        let wg_len = d.cout_g * d.krows();
        for ni in 0..d.n {
            for gi in 0..d.groups {
                let xg = &xs[(ni * d.cin + gi * d.cin_g) * d.h * d.w..][..d.cin_g * d.h * d.w];
                let colv = if d.is_pointwise() {
                    ArrayView2::from_shape((d.krows(), plane), xg).expect("cols")
                } else {
                    im2col(xg, &d, &mut cols);
                    ArrayView2::from_shape((d.krows(), plane), &cols[..]).expect("cols")
                };
                let wg = ArrayView2::from_shape((d.cout_g, d.krows()), &ws[gi * wg_len..][..wg_len])
                    .expect("weight group");
                let start = (ni * d.cout + gi * d.cout_g) * plane;
                let mut og = ArrayViewMut2::from_shape((d.cout_g, plane), &mut out[start..start + d.cout_g * plane])
                    .expect("out group");
                general_mat_mul(1.0, &wg, &colv, 0.0, &mut og);
            }
        }
        if let Some(b) = bias {
            for ni in 0..d.n {
                for (co, &bv) in b.value().iter().enumerate() {
                    let start = (ni * d.cout + co) * plane;
                    out[start..start + plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let value = Tensor::from_shape_vec(IxDyn(&[d.n, d.cout, d.oh, d.ow]), out).expect("conv out");
        Ok(Var::from_op(
            value,
            Op::Conv2d {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
                geom,
            },
        ))
    }
}

pub(crate) fn conv2d_backward(
    input: &Var,
    weight: &Var,
    has_bias: bool,
    geom: &ConvGeom,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let d = Dims::new(input.shape(), weight.shape(), geom).expect("validated in forward");
    let x = input.value().as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let wt = weight.value().as_standard_layout();
    let ws = wt.as_slice().expect("standard layout");
    let g = grad.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let plane = d.oh * d.ow;
    let wg_len = d.cout_g * d.krows();

    let mut dx = needs[0].then(|| vec![0.0; xs.len()]);
    let mut dw = needs[1].then(|| vec![0.0; ws.len()]);
    let mut cols = vec![0.0; d.krows() * plane];
    let mut dcols = vec![0.0; d.krows() * plane];

    for ni in 0..d.n {
        for gi in 0..d.groups {
            let xoff = (ni * d.cin + gi * d.cin_g) * d.h * d.w;
            let xlen = d.cin_g * d.h * d.w;
            let goff = (ni * d.cout + gi * d.cout_g) * plane;
            let gy = ArrayView2::from_shape((d.cout_g, plane), &gs[goff..goff + d.cout_g * plane])
                .expect("grad group");
            if let Some(dw) = dw.as_mut() {
                let colv = if d.is_pointwise() {
                    ArrayView2::from_shape((d.krows(), plane), &xs[xoff..xoff + xlen]).expect("cols")
                } else {
                    im2col(&xs[xoff..xoff + xlen], &d, &mut cols);
                    ArrayView2::from_shape((d.krows(), plane), &cols[..]).expect("cols")
                };
                let mut dwg = ArrayViewMut2::from_shape(
                    (d.cout_g, d.krows()),
                    &mut dw[gi * wg_len..(gi + 1) * wg_len],
                )
                .expect("dw group");
                general_mat_mul(1.0, &gy, &colv.t(), 1.0, &mut dwg);
            }
            if let Some(dx) = dx.as_mut() {
                let wg = ArrayView2::from_shape((d.cout_g, d.krows()), &ws[gi * wg_len..][..wg_len])
                    .expect("weight group");
                if d.is_pointwise() {
                    let mut dxg = ArrayViewMut2::from_shape((d.krows(), plane), &mut dx[xoff..xoff + xlen])
                        .expect("dx group");
                    general_mat_mul(1.0, &wg.t(), &gy, 1.0, &mut dxg);
                } else {
                    let mut dc = ArrayViewMut2::from_shape((d.krows(), plane), &mut dcols[..]).expect("dcols");
                    general_mat_mul(1.0, &wg.t(), &gy, 0.0, &mut dc);
                    col2im(&dcols, &d, &mut dx[xoff..xoff + xlen]);
                }
            }
        }
    }

    let mut out = vec![
        dx.map(|v| Tensor::from_shape_vec(IxDyn(input.shape()), v).expect("dx")),
        dw.map(|v| Tensor::from_shape_vec(IxDyn(weight.shape()), v).expect("dw")),
    ];
    if has_bias {
        out.push(needs[2].then(|| {
            let mut db = vec![0.0; d.cout];
            for ni in 0..d.n {
                for (co, acc) in db.iter_mut().enumerate() {
                    let start = (ni * d.cout + co) * plane;
                    *acc += gs[start..start + plane].iter().sum::<f64>();
                }
            }
            Tensor::from_shape_vec(IxDyn(&[d.cout]), db).expect("db")
        }));
    }
    out
}
