use std::path::Path;

use lungxai_tensor::{no_grad, Var};
use ndarray::{Array2, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{fingerprint, image_batch, load_pretrained, MobileNetConfig, MobileNetV2};
use crate::datapipe::ImageTensor;
use crate::error::{invalid, Error, Result};
use crate::io::{Container, NamedArray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    MobilenetV2,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub input_size: usize,
    /// Seed for the random initialisation used when no weights are given.
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::MobilenetV2,
            input_size: 256,
            seed: 42,
        }
    }
}

/// Frozen convolutional feature extractor; rows are the global average of
/// its final feature map.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub config: ExtractorConfig,
    pub net: MobileNetV2,
    fingerprint: String,
}

impl Extractor {
    pub fn new(config: ExtractorConfig, weights: Option<&Path>) -> Result<Self> {
        let mcfg = match config.kind {
            ExtractorKind::MobilenetV2 => MobileNetConfig::mobilenet_v2(),
            ExtractorKind::Toy => MobileNetConfig::toy(),
        };
        if config.input_size == 0 || config.input_size % mcfg.stride() != 0 {
            return Err(Error::Config(format!(
                "extractor input {} is not divisible by stride {}",
                config.input_size,
                mcfg.stride()
            )));
        }
        let mut net = MobileNetV2::new(mcfg, &mut ChaCha8Rng::seed_from_u64(config.seed));
        match weights {
            Some(p) => load_pretrained(&mut net, p)?,
            None => log::warn!("feature extractor uses random weights (no pretrained file given)"),
        }
        lungxai_tensor::nn::set_trainable(&mut net, false);
        let cfg_json = serde_json::to_string(&net.config).expect("config serializes");
        let fingerprint = fingerprint(&format!("{cfg_json}|{}", config.input_size), &net);
        Ok(Self {
            config,
            net,
            fingerprint,
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dims(&self) -> usize {
        self.net.out_channels()
    }

    /// Final feature map `[N, C, h, w]` for a batch of images at the
    /// extractor's input size.
    pub fn feature_map(&self, images: &[&ImageTensor]) -> Result<Var> {
        let s = self.config.input_size;
        if let Some(bad) = images.iter().find(|i| i.dim() != (s, s, 3)) {
            return Err(invalid!("extractor expects {s}x{s}x3 images, got {:?}", bad.dim()));
        }
        self.net.forward(&Var::constant(image_batch(images, s)?))
    }
}

/// Pooled deep features tagged with the extractor that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub fingerprint: String,
}

pub fn extract_features(images: &[&ImageTensor], ex: &Extractor) -> Result<FeatureMatrix> {
    let mut data = Array2::zeros((images.len(), ex.dims()));
    no_grad(|| -> Result<()> {
        for (ci, chunk) in images.chunks(16).enumerate() {
            let pooled = ex.feature_map(chunk)?.global_avg_pool()?;
            let pooled = pooled.value().view().into_dimensionality::<Ix2>().expect("[N, C]");
            data.slice_mut(ndarray::s![ci * 16..ci * 16 + chunk.len(), ..]).assign(&pooled);
        }
        Ok(())
    })?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("extracted features contain non-finite values".into()));
    }
    Ok(FeatureMatrix {
        data,
        fingerprint: ex.fingerprint().to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct FeatureMeta {
    fingerprint: String,
    labels: Vec<usize>,
}

pub const FEATURES_KIND: &str = "features";

pub fn save_features(path: &Path, f: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    let mut c = Container::new(
        FEATURES_KIND,
        FeatureMeta {
            fingerprint: f.fingerprint.clone(),
            labels: labels.to_vec(),
        },
    );
    let (n, d) = f.data.dim();
    c.push(NamedArray::f64("x", &[n, d], f.data.iter().copied().collect()));
    c.save(path)
}

pub fn load_features(path: &Path) -> Result<(FeatureMatrix, Vec<usize>)> {
    let c: Container<FeatureMeta> = Container::load(path, FEATURES_KIND)?;
    let (shape, x) = c.f64_array("x", path)?;
    let data = Array2::from_shape_vec((shape[0], shape[1]), x.to_vec()).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((
        FeatureMatrix {
            data,
            fingerprint: c.meta.fingerprint,
        },
        c.meta.labels,
    ))
}
