use lungxai_tensor::nn::{join, BatchNorm2d, Conv2d, Conv2dConfig, Module, Slot, SlotMut};
use lungxai_tensor::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{DenseBlock, DenseBlockSpec, LayerKind};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub growth_rate: usize,
    pub block_layers: Vec<usize>,
    pub layer: LayerKind,
    pub compression: f64,
}

impl DenseNetConfig {
    /// The 169-layer ImageNet network: 1664 channels at stride 32.
    pub fn densenet169() -> Self {
        Self {
            stem_channels: 64,
            stem_kernel: 7,
            growth_rate: 32,
            block_layers: vec![6, 12, 32, 32],
            layer: LayerKind::Bottleneck { bn_size: 4 },
            compression: 0.5,
        }
    }

    /// Two basic-layer blocks: 64 channels at stride 8.
    pub fn toy() -> Self {
        Self {
            stem_channels: 32,
            stem_kernel: 3,
            growth_rate: 16,
            block_layers: vec![2, 2],
            layer: LayerKind::Basic,
            compression: 0.5,
        }
    }

    pub fn stride(&self) -> usize {
        4 << self.block_layers.len().saturating_sub(1)
    }

    fn block_specs(&self) -> (Vec<DenseBlockSpec>, Vec<usize>) {
        let mut c = self.stem_channels;
        let mut specs = Vec::new();
        let mut transitions = Vec::new();
        for (i, &n) in self.block_layers.iter().enumerate() {
            let spec = DenseBlockSpec {
                input_channels: c,
                growth_rate: self.growth_rate,
                num_layers: n,
                layer: self.layer,
            };
            c = spec.output_channels();
            specs.push(spec);
            if i + 1 < self.block_layers.len() {
                c = (c as f64 * self.compression).floor() as usize;
                transitions.push(c);
            }
        }
        (specs, transitions)
    }

    pub fn out_channels(&self) -> usize {
        let (specs, _) = self.block_specs();
        specs.last().map_or(self.stem_channels, DenseBlockSpec::output_channels)
    }
}

#[derive(Debug, Clone)]
struct Transition {
    norm: BatchNorm2d,
    conv: Conv2d,
}

/// Densely connected backbone with torchvision parameter names under
/// `features.`.
#[derive(Debug, Clone)]
pub struct DenseNet {
    pub config: DenseNetConfig,
    conv0: Conv2d,
    norm0: BatchNorm2d,
    blocks: Vec<DenseBlock>,
    transitions: Vec<Transition>,
    norm5: BatchNorm2d,
}

impl DenseNet {
    pub fn new(config: DenseNetConfig, rng: &mut impl Rng) -> Self {
        let conv0 = Conv2d::new(
            3,
            config.stem_channels,
            config.stem_kernel,
            Conv2dConfig {
                stride: 2,
                padding: config.stem_kernel / 2,
                ..Default::default()
            },
            rng,
        );
        let norm0 = BatchNorm2d::new(config.stem_channels);
        let (specs, trans) = config.block_specs();
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            blocks.push(DenseBlock::new(*spec, rng));
            if let Some(&out) = trans.get(i) {
                let cin = spec.output_channels();
                transitions.push(Transition {
                    norm: BatchNorm2d::new(cin),
                    conv: Conv2d::new(cin, out, 1, Conv2dConfig::default(), rng),
                });
            }
        }
        let norm5 = BatchNorm2d::new(config.out_channels());
        Self {
            config,
            conv0,
            norm0,
            blocks,
            transitions,
            norm5,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    pub fn forward(&self, x: &Var, train: bool) -> Result<Var> {
        let mut h = self.norm0.forward(&self.conv0.forward(x)?, train)?.relu().max_pool2d(3, 2, 1)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(&h, train)?;
            if let Some(t) = self.transitions.get(i) {
                h = t.conv.forward(&t.norm.forward(&h, train)?.relu())?.avg_pool2d(2, 2)?;
            }
        }
        Ok(self.norm5.forward(&h, train)?.relu())
    }
}

impl Module for DenseNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        let p = join(prefix, "features");
        self.conv0.visit(&join(&p, "conv0"), f);
        self.norm0.visit(&join(&p, "norm0"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(&p, &format!("denseblock{}", i + 1)), f);
            if let Some(t) = self.transitions.get(i) {
                let tp = join(&p, &format!("transition{}", i + 1));
                t.norm.visit(&join(&tp, "norm"), f);
                t.conv.visit(&join(&tp, "conv"), f);
            }
        }
        self.norm5.visit(&join(&p, "norm5"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        let p = join(prefix, "features");
        self.conv0.visit_mut(&join(&p, "conv0"), f);
        self.norm0.visit_mut(&join(&p, "norm0"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(&p, &format!("denseblock{}", i + 1)), f);
            if let Some(t) = self.transitions.get_mut(i) {
                let tp = join(&p, &format!("transition{}", i + 1));
                t.norm.visit_mut(&join(&tp, "norm"), f);
                t.conv.visit_mut(&join(&tp, "conv"), f);
            }
        }
        self.norm5.visit_mut(&join(&p, "norm5"), f);
    }
}
