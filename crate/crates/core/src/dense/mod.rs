//! The dense-connectivity branch: model assembly, focal loss, training,
//! inference and model artifacts.

mod artifact;
mod focal;
mod model;
mod train;

pub use artifact::{load_artifact, save_artifact, DenseArtifact, CLASSES_FILE, CONFIG_FILE, HISTORY_FILE, WEIGHTS_FILE};
pub use focal::{focal_loss, focal_loss_value, inverse_frequency_alpha, FocalLossConfig, PROB_EPS};
pub use model::{build_model, DenseBackbone, DenseBranchConfig, DenseBranchModel, HeadOutput, CAM_LAYERS};
pub use train::{train, EpochStats, Labeled, TrainConfig, TrainHistory};
