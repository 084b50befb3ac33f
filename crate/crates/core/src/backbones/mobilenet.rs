use lungxai_tensor::nn::{join, BatchNorm2d, Conv2d, Conv2dConfig, Module, Slot, SlotMut};
use lungxai_tensor::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Inverted-residual stage: expansion `t`, output channels `c`, repeats
/// `n`, first stride `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSetting {
    pub t: usize,
    pub c: usize,
    pub n: usize,
    pub s: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobileNetConfig {
    pub stem_channels: usize,
    pub stages: Vec<StageSetting>,
    pub last_channels: usize,
}

const fn st(t: usize, c: usize, n: usize, s: usize) -> StageSetting {
    StageSetting { t, c, n, s }
}

impl MobileNetConfig {
    /// The ImageNet MobileNetV2: 1280 channels at stride 32.
    pub fn mobilenet_v2() -> Self {
        Self {
            stem_channels: 32,
            stages: vec![
                st(1, 16, 1, 1),
                st(6, 24, 2, 2),
                st(6, 32, 3, 2),
                st(6, 64, 4, 2),
                st(6, 96, 3, 1),
                st(6, 160, 3, 2),
                st(6, 320, 1, 1),
            ],
            last_channels: 1280,
        }
    }

    /// Three stages: 1280 channels at stride 8.
    pub fn toy() -> Self {
        Self {
            stem_channels: 16,
            stages: vec![st(1, 16, 1, 1), st(4, 24, 1, 2), st(4, 32, 1, 2)],
            last_channels: 1280,
        }
    }

    pub fn stride(&self) -> usize {
        2 * self.stages.iter().map(|s| s.s).product::<usize>()
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu6: bool,
}

impl ConvBn {
    fn new(cin: usize, cout: usize, k: usize, stride: usize, groups: usize, relu6: bool, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(
                cin,
                cout,
                k,
                Conv2dConfig {
                    stride,
                    padding: k / 2,
                    groups,
                    bias: false,
                },
                rng,
            ),
            bn: BatchNorm2d::new(cout),
            relu6,
        }
    }

    fn forward(&self, x: &Var) -> Result<Var> {
        let y = self.bn.forward(&self.conv.forward(x)?, false)?;
        Ok(if self.relu6 { y.relu6() } else { y })
    }

    fn visit_named(&self, conv: &str, bn: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit(conv, f);
        self.bn.visit(bn, f);
    }

    fn visit_named_mut(&mut self, conv: &str, bn: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.conv.visit_mut(conv, f);
        self.bn.visit_mut(bn, f);
    }
}

#[derive(Debug, Clone)]
struct InvertedResidual {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    project: ConvBn,
    residual: bool,
}

impl InvertedResidual {
    fn forward(&self, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        if let Some(e) = &self.expand {
            h = e.forward(&h)?;
        }
        let h = self.project.forward(&self.depthwise.forward(&h)?)?;
        Ok(if self.residual { h.add(x)? } else { h })
    }

    fn names(&self, prefix: &str) -> Vec<(String, String)> {
        let c = join(prefix, "conv");
        let mut i = 0;
        let mut out = Vec::new();
        if self.expand.is_some() {
            out.push((join(&c, "0.0"), join(&c, "0.1")));
            i = 1;
        }
        out.push((join(&c, &format!("{i}.0")), join(&c, &format!("{i}.1"))));
        out.push((join(&c, &(i + 1).to_string()), join(&c, &(i + 2).to_string())));
        out
    }
}

/// Inverted-residual backbone with torchvision parameter names; always run
/// with frozen running statistics.
#[derive(Debug, Clone)]
pub struct MobileNetV2 {
    pub config: MobileNetConfig,
    stem: ConvBn,
    blocks: Vec<InvertedResidual>,
    last: ConvBn,
}

impl MobileNetV2 {
    pub fn new(config: MobileNetConfig, rng: &mut impl Rng) -> Self {
        let stem = ConvBn::new(3, config.stem_channels, 3, 2, 1, true, rng);
        let mut cin = config.stem_channels;
        let mut blocks = Vec::new();
        for s in &config.stages {
            for r in 0..s.n {
                let stride = if r == 0 { s.s } else { 1 };
                let hidden = cin * s.t;
                blocks.push(InvertedResidual {
                    expand: (s.t != 1).then(|| ConvBn::new(cin, hidden, 1, 1, 1, true, rng)),
                    depthwise: ConvBn::new(hidden, hidden, 3, stride, hidden, true, rng),
                    project: ConvBn::new(hidden, s.c, 1, 1, 1, false, rng),
                    residual: stride == 1 && cin == s.c,
                });
                cin = s.c;
            }
        }
        let last = ConvBn::new(cin, config.last_channels, 1, 1, 1, true, rng);
        Self {
            config,
            stem,
            blocks,
            last,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.config.last_channels
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let mut h = self.stem.forward(x)?;
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        self.last.forward(&h)
    }
}

impl Module for MobileNetV2 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        let p = join(prefix, "features");
        self.stem.visit_named(&join(&p, "0.0"), &join(&p, "0.1"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            let names = b.names(&join(&p, &(i + 1).to_string()));
            let layers = b.expand.iter().chain([&b.depthwise, &b.project]);
            for (layer, (cn, bn)) in layers.zip(&names) {
                layer.visit_named(cn, bn, f);
            }
        }
        let li = self.blocks.len() + 1;
        self.last
            .visit_named(&join(&p, &format!("{li}.0")), &join(&p, &format!("{li}.1")), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        let p = join(prefix, "features");
        self.stem.visit_named_mut(&join(&p, "0.0"), &join(&p, "0.1"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let names = b.names(&join(&p, &(i + 1).to_string()));
            let layers = b.expand.iter_mut().chain([&mut b.depthwise, &mut b.project]);
            for (layer, (cn, bn)) in layers.zip(&names) {
                layer.visit_named_mut(cn, bn, f);
            }
        }
        let li = self.blocks.len() + 1;
        self.last
            .visit_named_mut(&join(&p, &format!("{li}.0")), &join(&p, &format!("{li}.1")), f);
    }
}
