//! Hybrid lung-CT classification toolkit.
//!
//! Two branches share one data pipeline: a densely connected CNN with
//! squeeze-and-excitation attention, feature-pyramid fusion and focal loss,
//! and a frozen MobileNetV2 feature extractor feeding a one-vs-rest kernel
//! SVM. Grad-CAM and Kernel SHAP explain both, and the metrics module
//! produces confusion matrices, per-class reports and ROC/AUC.

pub mod backbones;
pub mod blocks;
pub mod datapipe;
pub mod dense;
pub mod error;
pub mod explain;
pub mod io;
pub mod metrics;
pub mod render;
pub mod svm;

pub use error::{Error, ErrorKind, Result};
