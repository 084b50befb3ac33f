//! Parameterised layers and the state-visiting protocol used for
//! optimisation and serialization.

use std::collections::BTreeMap;
use std::sync::RwLock;

use ndarray::{Array1, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::conv::ConvGeom;
use crate::error::{Result, TensorError};
use crate::graph::{Tensor, Var};

/// A learnable tensor. Freezing it makes its graph leaf stop tracking
/// gradients, so frozen sub-networks are never recorded.
#[derive(Clone, Debug)]
pub struct Param {
    var: Var,
    trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self {
            var: Var::leaf(value),
            trainable: true,
        }
    }

    pub fn var(&self) -> &Var {
        &self.var
    }

    pub fn value(&self) -> &Tensor {
        self.var.value()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_value(&mut self, value: Tensor) {
        self.var = if self.trainable {
            Var::leaf(value)
        } else {
            Var::constant(value)
        };
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        if trainable != self.trainable {
            self.trainable = trainable;
            let value = self.var.value().clone();
            self.set_value(value);
        }
    }
}

pub enum Slot<'a> {
    Param(&'a Param),
    Buffer(&'a Tensor),
}

pub enum SlotMut<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Tensor),
}

/// Anything that owns named parameters and buffers.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>));
}

/// Joins a dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn state_dict(m: &dyn Module, prefix: &str) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    m.visit(prefix, &mut |name, slot| {
        let t = match slot {
            Slot::Param(p) => p.value().clone(),
            Slot::Buffer(b) => b.clone(),
        };
        out.insert(name.to_string(), t);
    });
    out
}

/// Copies every tensor of `m` from `state`. Missing names and shape
/// mismatches are errors; extra entries in `state` are ignored.
pub fn load_state_dict(m: &mut dyn Module, prefix: &str, state: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut err = None;
    m.visit_mut(prefix, &mut |name, slot| {
        if err.is_some() {
            return;
        }
        let Some(src) = state.get(name) else {
            err = Some(TensorError::MissingTensor(name.to_string()));
            return;
        };
        let expected = match &slot {
            SlotMut::Param(p) => p.value().shape().to_vec(),
            SlotMut::Buffer(b) => b.shape().to_vec(),
        };
        if src.shape() != expected.as_slice() {
            err = Some(TensorError::StateShape {
                name: name.to_string(),
                expected,
                found: src.shape().to_vec(),
            });
            return;
        }
        match slot {
            SlotMut::Param(p) => p.set_value(src.clone()),
            SlotMut::Buffer(b) => *b = src.clone(),
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn set_trainable(m: &mut dyn Module, trainable: bool) {
    m.visit_mut("", &mut |_, slot| {
        if let SlotMut::Param(p) = slot {
            p.set_trainable(trainable);
        }
    });
}

pub fn param_count(m: &dyn Module) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            n += p.value().len();
        }
    });
    n
}

/// He-normal initialisation (fan-in, ReLU gain).
pub fn kaiming_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    if bound == 0.0 {
        return Tensor::zeros(IxDyn(shape));
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    Tensor::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geom: ConvGeom,
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Default for Conv2dConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
            bias: false,
        }
    }
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, kernel: usize, cfg: Conv2dConfig, rng: &mut impl Rng) -> Self {
        let groups = cfg.groups.max(1);
        let fan_in = cin / groups * kernel * kernel;
        let weight = kaiming_normal(&[cout, cin / groups, kernel, kernel], fan_in, rng);
        let bias = cfg.bias.then(|| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Param::new(uniform(&[cout], bound, rng))
        });
        Self {
            weight: Param::new(weight),
            bias,
            geom: ConvGeom {
                stride: cfg.stride,
                padding: cfg.padding,
                groups,
            },
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value().shape()[1] * self.geom.groups
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.conv2d(self.weight.var(), self.bias.as_ref().map(Param::var), self.geom)
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), SlotMut::Param(b));
        }
    }
}

#[derive(Debug)]
struct RunningStats {
    mean: Tensor,
    var: Tensor,
}

/// Batch normalisation with running statistics (momentum 0.1, unbiased
/// running variance, matching the common framework convention).
#[derive(Debug)]
pub struct BatchNorm2d {
    pub weight: Param,
    pub bias: Param,
    running: RwLock<RunningStats>,
    pub eps: f64,
    pub momentum: f64,
}

impl Clone for BatchNorm2d {
    fn clone(&self) -> Self {
        let r = self.running.read().expect("bn stats lock");
        Self {
            weight: self.weight.clone(),
            bias: self.bias.clone(),
            running: RwLock::new(RunningStats {
                mean: r.mean.clone(),
                var: r.var.clone(),
            }),
            eps: self.eps,
            momentum: self.momentum,
        }
    }
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            weight: Param::new(Tensor::ones(IxDyn(&[channels]))),
            bias: Param::new(Tensor::zeros(IxDyn(&[channels]))),
            running: RwLock::new(RunningStats {
                mean: Tensor::zeros(IxDyn(&[channels])),
                var: Tensor::ones(IxDyn(&[channels])),
            }),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.value().len()
    }

    pub fn running_mean(&self) -> Tensor {
        self.running.read().expect("bn stats lock").mean.clone()
    }

    pub fn running_var(&self) -> Tensor {
        self.running.read().expect("bn stats lock").var.clone()
    }

    /// In training mode batch statistics are used and folded into the
    /// running averages; a layer whose parameters are frozen always uses
    /// its running statistics.
    pub fn forward(&self, x: &Var, train: bool) -> Result<Var> {
        let use_batch = train && self.weight.is_trainable();
        if use_batch {
            let (y, stats) = x.batch_norm(self.weight.var(), self.bias.var(), None, self.eps)?;
            if let Some((mean, var)) = stats {
                let shape = x.shape();
                let m = (shape[0] * shape[2] * shape[3]) as f64;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                let mut r = self.running.write().expect("bn stats lock");
                let mom = self.momentum;
                let mean: Array1<f64> = mean;
                let var: Array1<f64> = var * unbias;
                r.mean = &r.mean * (1.0 - mom) + &(mean.into_dyn() * mom);
                r.var = &r.var * (1.0 - mom) + &(var.into_dyn() * mom);
            }
            Ok(y)
        } else {
            let r = self.running.read().expect("bn stats lock");
            let (y, _) = x.batch_norm(
                self.weight.var(),
                self.bias.var(),
                Some((&r.mean, &r.var)),
                self.eps,
            )?;
            Ok(y)
        }
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
        f(&join(prefix, "bias"), Slot::Param(&self.bias));
        let r = self.running.read().expect("bn stats lock");
        f(&join(prefix, "running_mean"), Slot::Buffer(&r.mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&r.var));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), SlotMut::Param(&mut self.bias));
        let r = self.running.get_mut().expect("bn stats lock");
        f(&join(prefix, "running_mean"), SlotMut::Buffer(&mut r.mean));
        f(&join(prefix, "running_var"), SlotMut::Buffer(&mut r.var));
    }
}

/// Fully connected layer, `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self {
            weight: Param::new(uniform(&[fan_out, fan_in], bound, rng)),
            bias: bias.then(|| Param::new(uniform(&[fan_out], bound, rng))),
        }
    }

    pub fn from_weights(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.linear(self.weight.var(), self.bias.as_ref().map(Param::var))
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), SlotMut::Param(b));
        }
    }
}
