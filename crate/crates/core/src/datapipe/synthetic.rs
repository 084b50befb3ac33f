use std::f64::consts::PI;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    /// Pattern strength in `[0, 1]`; 0 makes all classes identically distributed.
    pub separability: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 100,
            size: 64,
            separability: 1.0,
            seed: 7,
        }
    }
}

const NOISE_STD: f64 = 0.08;
const STRIPE_AMP: f64 = 0.18;
const BLOB_AMP: f64 = 0.25;

/// Grey images of oriented stripes plus a Gaussian blob, both with a
/// class-specific frequency, orientation and position, over pixel noise.
/// Phase and blob jitter vary per image.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.per_class == 0 || spec.size == 0 {
        return Err(Error::Config(format!("synthetic spec needs positive counts: {spec:?}")));
    }
    if !(0.0..=1.0).contains(&spec.separability) {
        return Err(Error::Config(format!("separability {} must lie in [0, 1]", spec.separability)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let s = spec.size as f64;
    let k = spec.classes as f64;
    let classes: Vec<String> = (0..spec.classes).map(|c| format!("class_{c}")).collect();
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for c in 0..spec.classes {
        let cf = c as f64;
        let freq = 3.0 + 3.0 * cf;
        let theta = cf * PI / k;
        let (ct, st) = (theta.cos(), theta.sin());
        let angle = 2.0 * PI * cf / k;
        let (bx, by) = (s / 2.0 + 0.25 * s * angle.cos(), s / 2.0 + 0.25 * s * angle.sin());
        let sigma = s / 10.0;
        for i in 0..spec.per_class {
            let phase = rng.random_range(0.0..2.0 * PI);
            let jx = bx + rng.random_range(-s / 16.0..=s / 16.0);
            let jy = by + rng.random_range(-s / 16.0..=s / 16.0);
            let mut img = Array3::<f32>::zeros((spec.size, spec.size, 3));
            for y in 0..spec.size {
                for x in 0..spec.size {
                    let (xf, yf) = (x as f64, y as f64);
                    let stripe = (2.0 * PI * freq * (xf * ct + yf * st) / s + phase).sin();
                    let d2 = (xf - jx).powi(2) + (yf - jy).powi(2);
                    let blob = (-d2 / (2.0 * sigma * sigma)).exp();
                    let pattern = STRIPE_AMP * stripe + BLOB_AMP * blob;
                    let v = (0.5 + spec.separability * pattern + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                    for ch in 0..3 {
                        img[[y, x, ch]] = v;
                    }
                }
            }
            samples.push(Sample {
                image: img,
                label: c,
                source_path: format!("synthetic://{}/{i:05}", classes[c]),
                class_name: classes[c].clone(),
            });
        }
    }
    Ok(Dataset { classes, samples })
}
