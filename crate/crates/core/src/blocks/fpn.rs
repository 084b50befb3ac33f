use lungxai_tensor::nn::{join, Conv2d, Conv2dConfig, Module, Slot, SlotMut};
use lungxai_tensor::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpnSpec {
    pub pyramid_channels: usize,
    /// Input widths, coarsest level first.
    pub in_channels: Vec<usize>,
}

/// Top-down fusion `P_i = smooth_i(lateral_i(F_i) + up2(M_{i−1}))`, where
/// `M` is the merged map before smoothing. Laterals are bias-free 1×1
/// convolutions and smoothing is a 3×3 convolution with bias.
#[derive(Debug, Clone)]
pub struct Fpn {
    pub spec: FpnSpec,
    pub laterals: Vec<Conv2d>,
    pub smooth: Vec<Conv2d>,
}

impl Fpn {
    pub fn new(spec: FpnSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.in_channels.is_empty() || spec.pyramid_channels == 0 {
            return Err(invalid!("FPN needs at least one level and positive width"));
        }
        let p = spec.pyramid_channels;
        let laterals = spec
            .in_channels
            .iter()
            .map(|&c| Conv2d::new(c, p, 1, Conv2dConfig::default(), rng))
            .collect();
        let smooth = spec
            .in_channels
            .iter()
            .map(|_| {
                Conv2d::new(
                    p,
                    p,
                    3,
                    Conv2dConfig {
                        padding: 1,
                        bias: true,
                        ..Default::default()
                    },
                    rng,
                )
            })
            .collect();
        Ok(Self { spec, laterals, smooth })
    }

    /// Fuses `levels` (coarsest first); returns one map per level.
    pub fn forward(&self, levels: &[Var]) -> Result<Vec<Var>> {
        if levels.len() != self.laterals.len() {
            return Err(invalid!("FPN built for {} levels, got {}", self.laterals.len(), levels.len()));
        }
        for (i, (lv, &c)) in levels.iter().zip(&self.spec.in_channels).enumerate() {
            if lv.shape().len() != 4 || lv.shape()[1] != c {
                return Err(invalid!("FPN level {i} expects {c} channels, got shape {:?}", lv.shape()));
            }
        }
        for w in levels.windows(2) {
            let (coarse, fine) = (w[0].shape(), w[1].shape());
            if coarse[2] != fine[2].div_ceil(2) || coarse[3] != fine[3].div_ceil(2) {
                return Err(invalid!(
                    "FPN levels {:?} and {:?} are not a factor-2 chain",
                    &coarse[2..],
                    &fine[2..]
                ));
            }
        }
        let mut outs = Vec::with_capacity(levels.len());
        let mut merged: Option<Var> = None;
        for (i, lv) in levels.iter().enumerate() {
            let lat = self.laterals[i].forward(lv)?;
            let m = match &merged {
                None => lat,
                Some(up) => lat.add(&up.upsample2x_to(lv.shape()[2], lv.shape()[3])?)?,
            };
            outs.push(self.smooth[i].forward(&m)?);
            merged = Some(m);
        }
        Ok(outs)
    }
}

impl Module for Fpn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (i, (l, s)) in self.laterals.iter().zip(&self.smooth).enumerate() {
            l.visit(&join(prefix, &format!("lateral{i}")), f);
            s.visit(&join(prefix, &format!("smooth{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        for (i, (l, s)) in self.laterals.iter_mut().zip(&mut self.smooth).enumerate() {
            l.visit_mut(&join(prefix, &format!("lateral{i}")), f);
            s.visit_mut(&join(prefix, &format!("smooth{i}")), f);
        }
    }
}
