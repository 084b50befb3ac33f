//! Dense connectivity, squeeze-and-excitation attention and feature
//! pyramid fusion.

mod dense;
mod fpn;
mod se;

pub use dense::{DenseBlock, DenseBlockSpec, DenseLayer, LayerKind};
pub use fpn::{Fpn, FpnSpec};
pub use se::SeBlock;
