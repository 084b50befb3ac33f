use std::path::Path;

use lungxai_tensor::nn::{join, set_trainable, Linear, Module, Slot, SlotMut};
use lungxai_tensor::{no_grad, Tensor, Var};
use ndarray::{Array2, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{fingerprint, image_batch, load_pretrained, DenseNet, DenseNetConfig};
use crate::blocks::{Fpn, FpnSpec, SeBlock};
use crate::datapipe::ImageTensor;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseBackbone {
    Densenet169,
    Toy,
}

impl DenseBackbone {
    pub fn config(self) -> DenseNetConfig {
        match self {
            DenseBackbone::Densenet169 => DenseNetConfig::densenet169(),
            DenseBackbone::Toy => DenseNetConfig::toy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseBranchConfig {
    pub input_size: usize,
    pub backbone: DenseBackbone,
    pub freeze_backbone: bool,
    pub num_classes: usize,
    pub se_ratio: usize,
    pub pyramid_channels: usize,
    /// 1 fuses the backbone map alone; 2 adds a stride-2 subsampled level
    /// above it so the top-down path is exercised.
    pub fpn_levels: usize,
    pub seed: u64,
}

impl Default for DenseBranchConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            backbone: DenseBackbone::Densenet169,
            freeze_backbone: true,
            num_classes: 3,
            se_ratio: 16,
            pyramid_channels: 256,
            fpn_levels: 2,
            seed: 42,
        }
    }
}

/// Feature map exposed to Grad-CAM.
pub const CAM_LAYERS: [&str; 3] = ["backbone", "se", "fpn"];

/// Backbone → SE → FPN → global average pooling → linear → softmax.
#[derive(Debug, Clone)]
pub struct DenseBranchModel {
    pub config: DenseBranchConfig,
    pub backbone: DenseNet,
    pub se: SeBlock,
    pub fpn: Fpn,
    pub head: Linear,
}

pub fn build_model(cfg: &DenseBranchConfig) -> Result<DenseBranchModel> {
    let bcfg = cfg.backbone.config();
    if cfg.num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", cfg.num_classes)));
    }
    if cfg.input_size == 0 || cfg.input_size % bcfg.stride() != 0 {
        return Err(Error::Config(format!(
            "input size {} is not divisible by backbone stride {}",
            cfg.input_size,
            bcfg.stride()
        )));
    }
    if !(1..=2).contains(&cfg.fpn_levels) {
        return Err(Error::Config(format!("fpn_levels must be 1 or 2, got {}", cfg.fpn_levels)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut backbone = DenseNet::new(bcfg, &mut rng);
    let c = backbone.out_channels();
    let se = SeBlock::new(c, cfg.se_ratio, &mut rng).map_err(|e| Error::Config(e.to_string()))?;
    let fpn = Fpn::new(
        FpnSpec {
            pyramid_channels: cfg.pyramid_channels,
            in_channels: vec![c; cfg.fpn_levels],
        },
        &mut rng,
    )?;
    let head = Linear::new(cfg.pyramid_channels, cfg.num_classes, true, &mut rng);
    if cfg.freeze_backbone {
        set_trainable(&mut backbone, false);
    }
    Ok(DenseBranchModel {
        config: cfg.clone(),
        backbone,
        se,
        fpn,
        head,
    })
}

/// Output of the post-backbone stages.
pub struct HeadOutput {
    pub logits: Var,
    /// The tapped feature map as a gradient-tracking leaf, when requested.
    pub tap: Option<Var>,
}

impl DenseBranchModel {
    pub fn load_backbone_weights(&mut self, path: &Path) -> Result<()> {
        load_pretrained(&mut self.backbone, path)?;
        if self.config.freeze_backbone {
            set_trainable(&mut self.backbone, false);
        }
        Ok(())
    }

    pub fn backbone_trainable(&self) -> bool {
        !self.config.freeze_backbone
    }

    pub fn batch(&self, images: &[&ImageTensor]) -> Result<Tensor> {
        image_batch(images, self.config.input_size)
    }

    pub fn backbone_features(&self, x: &Var, train: bool) -> Result<Var> {
        let s = self.config.input_size;
        if x.shape().len() != 4 || x.shape()[1..] != [3, s, s] {
            return Err(invalid!("expected input [N, 3, {s}, {s}], got {:?}", x.shape()));
        }
        self.backbone.forward(x, train)
    }

    /// SE, FPN, pooling and the linear head on backbone features. `tap`
    /// names a layer from [`CAM_LAYERS`] whose output is cut from the graph
    /// and replaced by a fresh leaf.
    pub fn head_forward(&self, feats: &Var, tap: Option<&str>) -> Result<HeadOutput> {
        if let Some(layer) = tap {
            if !CAM_LAYERS.contains(&layer) {
                return Err(invalid!("unknown layer {layer:?}; expected one of {CAM_LAYERS:?}"));
            }
        }
        let mut tapped = None;
        let mut cut = |name: &str, v: Var| -> Var {
            if tap == Some(name) {
                let leaf = v.detach_leaf();
                tapped = Some(leaf.clone());
                leaf
            } else {
                v
            }
        };
        let feats = cut("backbone", feats.clone());
        let se = cut("se", self.se.forward(&feats)?);
        let levels = if self.config.fpn_levels == 2 {
            vec![se.max_pool2d(1, 2, 0)?, se.clone()]
        } else {
            vec![se]
        };
        let fused = self.fpn.forward(&levels)?.pop().expect("at least one level");
        let fused = cut("fpn", fused);
        let logits = self.head.forward(&fused.global_avg_pool()?)?;
        Ok(HeadOutput { logits, tap: tapped })
    }

    pub fn forward(&self, x: &Var, train: bool) -> Result<Var> {
        let feats = self.backbone_features(x, train)?;
        Ok(self.head_forward(&feats, None)?.logits)
    }

    /// Class probabilities, one row per image.
    pub fn predict(&self, images: &[&ImageTensor]) -> Result<Array2<f64>> {
        let k = self.config.num_classes;
        let mut out = Array2::zeros((images.len(), k));
        no_grad(|| -> Result<()> {
            for (ci, chunk) in images.chunks(16).enumerate() {
                let x = Var::constant(self.batch(chunk)?);
                let p = self.forward(&x, false)?.softmax()?;
                let p = p.value().view().into_dimensionality::<Ix2>().expect("[N, K]");
                out.slice_mut(ndarray::s![ci * 16..ci * 16 + chunk.len(), ..]).assign(&p);
            }
            Ok(())
        })?;
        Ok(out)
    }

    pub fn fingerprint(&self) -> String {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        fingerprint(&cfg, self)
    }
}

impl Module for DenseBranchModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.se.visit(&join(prefix, "se"), f);
        self.fpn.visit(&join(prefix, "fpn"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.se.visit_mut(&join(prefix, "se"), f);
        self.fpn.visit_mut(&join(prefix, "fpn"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
