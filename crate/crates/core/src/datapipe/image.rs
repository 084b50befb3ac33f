use image::DynamicImage;
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `H × W × C` intensities in `[0, 1]`.
pub type ImageTensor = Array3<f32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub target_size: (usize, usize),
    pub replicate_channels: bool,
    pub grayscale_weights: [f64; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: (256, 256),
            replicate_channels: true,
            grayscale_weights: [0.299, 0.587, 0.114],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::Config(format!("target size {:?} must be positive", self.target_size)));
        }
        let s: f64 = self.grayscale_weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.grayscale_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config(format!(
                "grayscale weights {:?} must be non-negative and sum to 1",
                self.grayscale_weights
            )));
        }
        Ok(())
    }
}

/// Converts a decoded image to `H × W × C` floats, dividing 8-bit values by
/// 255 and 16-bit values by 65535. Two-channel images are rejected.
pub fn decoded_to_tensor(img: &DynamicImage) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageRgba8(b) => (4, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgba16(b) => (4, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgb32F(b) => (3, b.as_raw().clone()),
        DynamicImage::ImageRgba32F(b) => (4, b.as_raw().clone()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            return Err(invalid!("unsupported channel count 2"))
        }
        other => return Err(invalid!("unsupported pixel layout {:?}", other.color())),
    };
    Array3::from_shape_vec((h, w, c), data).map_err(|e| invalid!("image buffer: {e}"))
}

/// Grayscale conversion, optional replication to three channels, bilinear
/// resize and clamping to `[0, 1]`.
///
/// Pixels whose colour channels already agree keep their value untouched,
/// and a tensor already at the target size is not resampled, so
/// preprocessing a preprocessed tensor is the identity.
pub fn preprocess(raw: ArrayView3<f32>, cfg: &PreprocessConfig) -> Result<ImageTensor> {
    let (h, w, c) = raw.dim();
    if h == 0 || w == 0 {
        return Err(invalid!("image has zero dimension {h}x{w}"));
    }
    if !matches!(c, 1 | 3 | 4) {
        return Err(invalid!("unsupported channel count {c}"));
    }
    let [wr, wg, wb] = cfg.grayscale_weights;
    let mut planes = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let px = raw.slice(ndarray::s![y, x, ..]);
            let rgb = if c == 1 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            let out = if cfg.replicate_channels {
                let g = if rgb[0] == rgb[1] && rgb[1] == rgb[2] {
                    rgb[0]
                } else {
                    (wr * rgb[0] as f64 + wg * rgb[1] as f64 + wb * rgb[2] as f64) as f32
                };
                [g; 3]
            } else {
                rgb
            };
            for (k, v) in out.into_iter().enumerate() {
                planes[[y, x, k]] = v;
            }
        }
    }
    let (th, tw) = cfg.target_size;
    let mut out = if (h, w) == (th, tw) {
        planes
    } else {
        resize_bilinear(planes.view(), th, tw)
    };
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Half-pixel-centred bilinear resampling of an `H × W × C` array.
pub fn resize_bilinear(src: ArrayView3<f32>, out_h: usize, out_w: usize) -> ImageTensor {
    let (h, w, c) = src.dim();
    let mut out = Array3::<f32>::zeros((out_h, out_w, c));
    let ys: Vec<(usize, usize, f32)> = (0..out_h).map(|i| taps(i, h, out_h)).collect();
    let xs: Vec<(usize, usize, f32)> = (0..out_w).map(|j| taps(j, w, out_w)).collect();
    for (i, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (j, &(x0, x1, tx)) in xs.iter().enumerate() {
            for k in 0..c {
                let top = lerp(src[[y0, x0, k]], src[[y0, x1, k]], tx);
                let bot = lerp(src[[y1, x0, k]], src[[y1, x1, k]], tx);
                out[[i, j, k]] = lerp(top, bot, ty);
            }
        }
    }
    out
}

/// Same as [`resize_bilinear`] for a single `f64` plane.
pub fn resize_plane(src: ndarray::ArrayView2<f64>, out_h: usize, out_w: usize) -> ndarray::Array2<f64> {
    let (h, w) = src.dim();
    let ys: Vec<(usize, usize, f32)> = (0..out_h).map(|i| taps(i, h, out_h)).collect();
    let xs: Vec<(usize, usize, f32)> = (0..out_w).map(|j| taps(j, w, out_w)).collect();
    ndarray::Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let (y0, y1, ty) = ys[i];
        let (x0, x1, tx) = xs[j];
        let (ty, tx) = (ty as f64, tx as f64);
        let top = src[[y0, x0]] + (src[[y0, x1]] - src[[y0, x0]]) * tx;
        let bot = src[[y1, x0]] + (src[[y1, x1]] - src[[y1, x0]]) * tx;
        top + (bot - top) * ty
    })
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

fn taps(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f32) {
    let pos = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, (pos - i0 as f64) as f32)
}
