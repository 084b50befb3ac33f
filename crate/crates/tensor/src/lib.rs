//! A small reverse-mode autodiff engine over `ndarray`, sized for the
//! convolutional models and explainers in `lungxai`.
//!
//! Values are `f64` throughout so that gradients can be checked against
//! finite differences at tight tolerances.

mod conv;
mod error;
mod graph;
pub mod io;
pub mod nn;
mod ops;
pub mod optim;
mod pool;

pub use conv::{conv_out_dim, ConvGeom};
pub use error::{Result, TensorError};
pub use graph::{is_grad_enabled, no_grad, CustomOp, Gradients, Tensor, Var};
pub use ops::sigmoid;
