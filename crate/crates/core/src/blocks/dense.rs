use lungxai_tensor::nn::{join, BatchNorm2d, Conv2d, Conv2dConfig, Module, Slot, SlotMut};
use lungxai_tensor::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Composite transform `H_l` of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// conv3×3 → BN → ReLU.
    Basic,
    /// BN → ReLU → conv1×1 (`bn_size·k`) → BN → ReLU → conv3×3.
    Bottleneck { bn_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlockSpec {
    pub input_channels: usize,
    pub growth_rate: usize,
    pub num_layers: usize,
    pub layer: LayerKind,
}

impl DenseBlockSpec {
    pub fn output_channels(&self) -> usize {
        self.input_channels + self.num_layers * self.growth_rate
    }
}

#[derive(Debug, Clone)]
pub enum DenseLayer {
    Basic {
        conv: Conv2d,
        norm: BatchNorm2d,
    },
    Bottleneck {
        norm1: BatchNorm2d,
        conv1: Conv2d,
        norm2: BatchNorm2d,
        conv2: Conv2d,
    },
}

fn conv3x3(cin: usize, cout: usize, rng: &mut impl Rng) -> Conv2d {
    Conv2d::new(
        cin,
        cout,
        3,
        Conv2dConfig {
            padding: 1,
            ..Default::default()
        },
        rng,
    )
}

impl DenseLayer {
    pub fn new(kind: LayerKind, cin: usize, growth: usize, rng: &mut impl Rng) -> Self {
        match kind {
            LayerKind::Basic => DenseLayer::Basic {
                conv: conv3x3(cin, growth, rng),
                norm: BatchNorm2d::new(growth),
            },
            LayerKind::Bottleneck { bn_size } => DenseLayer::Bottleneck {
                norm1: BatchNorm2d::new(cin),
                conv1: Conv2d::new(cin, bn_size * growth, 1, Conv2dConfig::default(), rng),
                norm2: BatchNorm2d::new(bn_size * growth),
                conv2: conv3x3(bn_size * growth, growth, rng),
            },
        }
    }

    pub fn forward(&self, x: &Var, train: bool) -> Result<Var> {
        Ok(match self {
            DenseLayer::Basic { conv, norm } => norm.forward(&conv.forward(x)?, train)?.relu(),
            DenseLayer::Bottleneck {
                norm1,
                conv1,
                norm2,
                conv2,
            } => {
                let h = conv1.forward(&norm1.forward(x, train)?.relu())?;
                conv2.forward(&norm2.forward(&h, train)?.relu())?
            }
        })
    }

    /// The convolution kernels of this layer.
    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        match self {
            DenseLayer::Basic { conv, .. } => vec![conv],
            DenseLayer::Bottleneck { conv1, conv2, .. } => vec![conv1, conv2],
        }
    }
}

impl Module for DenseLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        match self {
            DenseLayer::Basic { conv, norm } => {
                conv.visit(&join(prefix, "conv"), f);
                norm.visit(&join(prefix, "norm"), f);
            }
            DenseLayer::Bottleneck {
                norm1,
                conv1,
                norm2,
                conv2,
            } => {
                norm1.visit(&join(prefix, "norm1"), f);
                conv1.visit(&join(prefix, "conv1"), f);
                norm2.visit(&join(prefix, "norm2"), f);
                conv2.visit(&join(prefix, "conv2"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        match self {
            DenseLayer::Basic { conv, norm } => {
                conv.visit_mut(&join(prefix, "conv"), f);
                norm.visit_mut(&join(prefix, "norm"), f);
            }
            DenseLayer::Bottleneck {
                norm1,
                conv1,
                norm2,
                conv2,
            } => {
                norm1.visit_mut(&join(prefix, "norm1"), f);
                conv1.visit_mut(&join(prefix, "conv1"), f);
                norm2.visit_mut(&join(prefix, "norm2"), f);
                conv2.visit_mut(&join(prefix, "conv2"), f);
            }
        }
    }
}

/// Dense connectivity: layer `l` sees the concatenation of the block input
/// and every earlier layer's output.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub spec: DenseBlockSpec,
    pub layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(spec: DenseBlockSpec, rng: &mut impl Rng) -> Self {
        let layers = (0..spec.num_layers)
            .map(|l| DenseLayer::new(spec.layer, spec.input_channels + l * spec.growth_rate, spec.growth_rate, rng))
            .collect();
        Self { spec, layers }
    }

    pub fn forward(&self, x: &Var, train: bool) -> Result<Var> {
        Ok(self.forward_traced(x, train, None)?.0)
    }

    /// Forward pass that also returns each layer's input. With
    /// `ablate = Some(j)` the output of layer `j` is replaced by zeros.
    pub fn forward_traced(&self, x: &Var, train: bool, ablate: Option<usize>) -> Result<(Var, Vec<Var>)> {
        let c = x.shape().get(1).copied().unwrap_or(0);
        if x.shape().len() != 4 || c != self.spec.input_channels {
            return Err(invalid!(
                "dense block expects {} input channels, got shape {:?}",
                self.spec.input_channels,
                x.shape()
            ));
        }
        let mut features = vec![x.clone()];
        let mut inputs = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if features.len() == 1 {
                features[0].clone()
            } else {
                Var::concat_channels(&features)?
            };
            let mut out = layer.forward(&input, train)?;
            if ablate == Some(l) {
                out = Var::constant(Tensor::zeros(out.value().raw_dim()));
            }
            inputs.push(input);
            features.push(out);
        }
        let out = if features.len() == 1 {
            features.pop().expect("input feature")
        } else {
            Var::concat_channels(&features)?
        };
        Ok((out, inputs))
    }
}

impl Module for DenseBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("denselayer{}", l + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("denselayer{}", l + 1)), f);
        }
    }
}
