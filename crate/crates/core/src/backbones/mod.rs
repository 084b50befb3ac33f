//! Convolutional backbones and image batching.

mod densenet;
mod mobilenet;

use std::path::Path;

use lungxai_tensor::io::load_safetensors;
use lungxai_tensor::nn::{load_state_dict, state_dict, Module};
use lungxai_tensor::Tensor;
use ndarray::Array4;
use sha2::{Digest, Sha256};

pub use densenet::{DenseNet, DenseNetConfig};
pub use mobilenet::{MobileNetConfig, MobileNetV2, StageSetting};

use crate::datapipe::{resize_bilinear, ImageTensor};
use crate::error::{invalid, Result};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Stacks images into an `[N, 3, size, size]` batch, resizing bilinearly
/// when needed and applying ImageNet channel normalisation.
pub fn image_batch(images: &[&ImageTensor], size: usize) -> Result<Tensor> {
    let mut out = Array4::<f64>::zeros((images.len(), 3, size, size));
    for (n, img) in images.iter().enumerate() {
        if img.dim().2 != 3 {
            return Err(invalid!("expected 3-channel images, got {:?}", img.dim()));
        }
        let resized;
        let src = if img.dim().0 == size && img.dim().1 == size {
            *img
        } else {
            resized = resize_bilinear(img.view(), size, size);
            &resized
        };
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    out[[n, c, y, x]] = (src[[y, x, c]] as f64 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
                }
            }
        }
    }
    Ok(out.into_dyn())
}

/// SHA-256 over a configuration string and every named tensor.
pub fn fingerprint(config: &str, m: &dyn Module) -> String {
    let mut h = Sha256::new();
    h.update(config.as_bytes());
    for (name, t) in state_dict(m, "") {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Loads torchvision-named weights; unrelated entries such as a
/// classifier head are ignored.
pub fn load_pretrained(m: &mut dyn Module, path: &Path) -> Result<()> {
    let state = load_safetensors(path)?;
    load_state_dict(m, "", &state)?;
    Ok(())
}
