//! Computation graph nodes and reverse-mode differentiation.
//!
//! A [`Var`] is an immutable, reference-counted node holding a value and,
//! when gradients are being tracked, the operation that produced it. Graphs
//! are built eagerly by calling ops on vars and torn down when the last
//! handle is dropped.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};

use crate::conv::ConvGeom;
use crate::error::{Result, TensorError};
use crate::{conv, ops, pool};

/// Dense `f64` tensor with dynamic rank; images and feature maps use NCHW.
pub type Tensor = ArrayD<f64>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether ops on this thread currently record the graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// A differentiable operation defined outside this crate.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> &[Var];

    /// Gradient with respect to each input, in the order of [`CustomOp::inputs`].
    /// `needs[i]` is false when input `i` does not track gradients.
    fn backward(&self, output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

pub(crate) struct BnSaved {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

pub(crate) enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Tensor),
    Relu(Var),
    Relu6(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Softmax(Var),
    GlobalAvgPool(Var),
    ChannelScale {
        input: Var,
        gate: Var,
    },
    Concat(Vec<Var>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        kernel: usize,
        stride: usize,
    },
    Upsample2x(Var),
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    Custom(Box<dyn CustomOp>),
}

impl Op {
    fn parents(&self) -> Vec<&Var> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::MulConst(a, _)
            | Op::Relu(a)
            | Op::Relu6(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::Softmax(a)
            | Op::GlobalAvgPool(a)
            | Op::Upsample2x(a) => vec![a],
            Op::Linear {
                input,
                weight,
                bias,
            }
            | Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![input, weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::ChannelScale { input, gate } => vec![input, gate],
            Op::Concat(parts) => parts.iter().collect(),
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
            Op::MaxPool { input, .. } | Op::AvgPool { input, .. } | Op::Gather { input, .. } => {
                vec![input]
            }
            Op::Custom(op) => op.inputs().iter().collect(),
        }
    }

    fn backward(&self, out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        match self {
            Op::Add(_, _) => vec![Some(grad.clone()), Some(grad.clone())],
            Op::Sub(_, _) => vec![Some(grad.clone()), Some(-grad)],
            Op::Mul(a, b) => vec![
                needs[0].then(|| grad * b.value()),
                needs[1].then(|| grad * a.value()),
            ],
            Op::Scale(_, c) => vec![Some(grad * *c)],
            Op::AddConst(_) => vec![Some(grad.clone())],
            Op::MulConst(_, c) => vec![Some(grad * c)],
            Op::Relu(a) => vec![Some(ops::relu_backward(a.value(), grad))],
            Op::Relu6(a) => vec![Some(ops::relu6_backward(a.value(), grad))],
            Op::Sigmoid(_) => vec![Some(ops::sigmoid_backward(out, grad))],
            Op::Sum(a) => vec![Some(Tensor::from_elem(a.value().raw_dim(), grad.sum()))],
            Op::Mean(a) => {
                let n = a.value().len().max(1) as f64;
                vec![Some(Tensor::from_elem(a.value().raw_dim(), grad.sum() / n))]
            }
            Op::Reshape(a) => vec![Some(
                grad.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(a.value().raw_dim())
                    .expect("reshape backward preserves element count"),
            )],
            Op::Linear {
                input,
                weight,
                bias,
            } => ops::linear_backward(input, weight, bias.is_some(), grad, needs),
            Op::Softmax(_) => vec![Some(ops::softmax_backward(out, grad))],
            Op::GlobalAvgPool(a) => vec![Some(ops::gap_backward(a.value(), grad))],
            Op::ChannelScale { input, gate } => ops::channel_scale_backward(input, gate, grad, needs),
            Op::Concat(parts) => ops::concat_backward(parts, grad, needs),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => conv::conv2d_backward(input, weight, bias.is_some(), geom, grad, needs),
            Op::BatchNorm { gamma, saved, .. } => ops::batch_norm_backward(gamma, saved, grad, needs),
            Op::MaxPool { input, argmax } => {
                vec![Some(pool::max_pool_backward(input.value(), argmax, grad))]
            }
            Op::AvgPool {
                input,
                kernel,
                stride,
            } => vec![Some(pool::avg_pool_backward(input.value(), *kernel, *stride, grad))],
            Op::Upsample2x(a) => vec![Some(pool::upsample2x_backward(a.value(), grad))],
            Op::Gather { input, indices } => {
                let mut g = Tensor::zeros(input.value().raw_dim());
                let gs = g.as_slice_mut().expect("fresh tensor is contiguous");
                for (k, &idx) in indices.iter().enumerate() {
                    gs[idx] += grad.as_slice_memory_order().expect("contiguous grad")[k];
                }
                vec![Some(g)]
            }
            Op::Custom(op) => op.backward(out, grad, needs),
        }
    }
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    op: Option<Op>,
}

/// Handle to a node in the computation graph. Cloning is cheap.
#[derive(Clone)]
pub struct Var(Arc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn new_node(value: Tensor, requires_grad: bool, op: Option<Op>) -> Self {
        Var(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Self {
        Self::new_node(value, false, None)
    }

    /// A leaf whose gradient is collected by [`Var::backward`].
    pub fn leaf(value: Tensor) -> Self {
        Self::new_node(value, true, None)
    }

    pub(crate) fn from_op(value: Tensor, op: Op) -> Self {
        let track = is_grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        if track {
            Self::new_node(value, true, Some(op))
        } else {
            Self::new_node(value, false, None)
        }
    }

    /// Wraps the output of a user-defined op.
    pub fn from_custom(value: Tensor, op: Box<dyn CustomOp>) -> Self {
        Self::from_op(value, Op::Custom(op))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.value.iter().next().copied().unwrap_or(f64::NAN)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Same value as a fresh leaf that tracks gradients.
    pub fn detach_leaf(&self) -> Var {
        Var::leaf(self.0.value.clone())
    }

    /// Backpropagates from a single-element output.
    pub fn backward(&self) -> Result<Gradients> {
        if self.0.value.len() != 1 {
            return Err(TensorError::NonScalarBackward(self.shape().to_vec()));
        }
        Ok(self.backward_with(Tensor::ones(self.0.value.raw_dim())))
    }

    /// Backpropagates `seed` (same shape as this var). Only leaf gradients are kept.
    pub fn backward_with(&self, seed: Tensor) -> Gradients {
        let mut leaf_grads = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads: leaf_grads };
        }
        let order = topo_order(self);
        let mut pending: HashMap<u64, Tensor> = HashMap::new();
        pending.insert(self.id(), seed);
        for var in order.iter().rev() {
            let Some(grad) = pending.remove(&var.id()) else {
                continue;
            };
            let Some(op) = &var.0.op else {
                leaf_grads.insert(var.id(), grad);
                continue;
            };
            let parents = op.parents();
            let needs: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
            let parent_grads = op.backward(&var.0.value, &grad, &needs);
            for ((parent, g), need) in parents.into_iter().zip(parent_grads).zip(needs) {
                if !need {
                    continue;
                }
                if let Some(g) = g {
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => *acc += &g,
                        None => {
                            pending.insert(parent.id(), g);
                        }
                    }
                }
            }
        }
        Gradients { grads: leaf_grads }
    }
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((var, expanded)) = stack.pop() {
        if expanded {
            order.push(var);
            continue;
        }
        if !visited.insert(var.id()) {
            continue;
        }
        stack.push((var.clone(), true));
        if let Some(op) = &var.0.op {
            for p in op.parents() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

/// Leaf gradients produced by one backward pass.
#[derive(Default)]
pub struct Gradients {
    grads: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(&var.id())
    }

    /// Gradient of `var`, or zeros of its shape when no path reached it.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(IxDyn(var.shape())))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
