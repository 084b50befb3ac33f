use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array3, ArrayView2};

use super::Heatmap;
use crate::datapipe::{resize_plane, ImageTensor};
use crate::error::{invalid, Result};
use crate::render::save_rgb_png;

/// Viridis sampled at nine evenly spaced stops.
const VIRIDIS: [[f64; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.229739, 0.322361, 0.545706],
    [0.172719, 0.448791, 0.557885],
    [0.127568, 0.566949, 0.550556],
    [0.157851, 0.683765, 0.501686],
    [0.369214, 0.788888, 0.382914],
    [0.678489, 0.863742, 0.189503],
    [0.993248, 0.906157, 0.143936],
];

pub fn viridis(t: f64) -> [f64; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * f)
}

/// Colourises a `[0, 1]` grid.
pub fn colorize(values: ArrayView2<f64>) -> ImageTensor {
    let (h, w) = values.dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, k)| viridis(values[[y, x]])[k] as f32)
}

/// Bilinearly upsamples the heatmap to the image size, colourises it and
/// alpha-blends it over the image.
pub fn overlay(heatmap: &Heatmap, image: &ImageTensor, opacity: f64) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(invalid!("opacity must lie in [0, 1], got {opacity}"));
    }
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(invalid!("overlay needs a 3-channel image, got {c}"));
    }
    let up = resize_plane(heatmap.values.view(), h, w);
    let colour = colorize(up.view());
    let a = opacity as f32;
    Ok(Array3::from_shape_fn((h, w, 3), |ix| (1.0 - a) * image[ix] + a * colour[ix]))
}

pub fn to_rgb_image(img: &ImageTensor) -> RgbImage {
    let (h, w, _) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |k: usize| (img[[y as usize, x as usize, k]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    save_rgb_png(&to_rgb_image(img), path)
}
