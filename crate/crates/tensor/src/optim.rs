//! First-order optimisers keyed by parameter path.

use std::collections::HashMap;

use crate::graph::{Gradients, Tensor};
use crate::nn::{Module, SlotMut};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: HashMap<String, Tensor>,
    second: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter that received a
    /// gradient. Returns the number of parameters updated.
    pub fn step(&mut self, model: &mut dyn Module, grads: &Gradients) -> usize {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut updated = 0;
        model.visit_mut("", &mut |name, slot| {
            let SlotMut::Param(p) = slot else { return };
            if !p.is_trainable() {
                return;
            }
            let Some(g) = grads.get(p.var()) else { return };
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.raw_dim()));
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.raw_dim()));
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let mut value = p.value().clone();
            ndarray::Zip::from(&mut value).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
            p.set_value(value);
            updated += 1;
        });
        updated
    }
}
