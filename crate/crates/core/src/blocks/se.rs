use lungxai_tensor::nn::{join, Linear, Module, Slot, SlotMut};
use lungxai_tensor::Var;
use ndarray::Array2;
use rand::Rng;

use crate::error::{invalid, Result};

/// Squeeze-and-excitation: `x · σ(W2 · ReLU(W1 · GAP(x)))` per channel,
/// with bias-free `W1: [C/r, C]` and `W2: [C, C/r]`.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
    pub ratio: usize,
}

impl SeBlock {
    pub fn new(channels: usize, ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        if ratio == 0 || channels == 0 || channels % ratio != 0 {
            return Err(invalid!("reduction ratio {ratio} must divide channel count {channels}"));
        }
        let hidden = channels / ratio;
        Ok(Self {
            fc1: Linear::new(channels, hidden, false, rng),
            fc2: Linear::new(hidden, channels, false, rng),
            channels,
            ratio,
        })
    }

    pub fn from_weights(w1: Array2<f64>, w2: Array2<f64>) -> Result<Self> {
        let (hidden, channels) = w1.dim();
        if w2.dim() != (channels, hidden) || hidden == 0 || channels % hidden != 0 {
            return Err(invalid!("SE weights {:?} and {:?} are inconsistent", w1.dim(), w2.dim()));
        }
        Ok(Self {
            fc1: Linear::from_weights(w1.into_dyn(), None),
            fc2: Linear::from_weights(w2.into_dyn(), None),
            channels,
            ratio: channels / hidden,
        })
    }

    /// Per-sample channel gates in `(0, 1)`, shape `[N, C]`.
    pub fn gates(&self, x: &Var) -> Result<Var> {
        if x.shape().len() != 4 || x.shape()[1] != self.channels {
            return Err(invalid!("SE block expects {} channels, got shape {:?}", self.channels, x.shape()));
        }
        let squeezed = x.global_avg_pool()?;
        Ok(self.fc2.forward(&self.fc1.forward(&squeezed)?.relu())?.sigmoid())
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        Ok(x.channel_scale(&self.gates(x)?)?)
    }

    pub fn zeroed(channels: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(invalid!("reduction ratio {ratio} must divide channel count {channels}"));
        }
        let h = channels / ratio;
        Self::from_weights(Array2::zeros((h, channels)), Array2::zeros((channels, h)))
    }
}

impl Module for SeBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

