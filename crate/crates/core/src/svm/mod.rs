//! Deep-feature extraction, standardisation and one-vs-rest kernel SVM.

mod features;
mod model;
mod pipeline;
mod scaler;
mod search;
pub mod smo;

pub use features::{extract_features, load_features, save_features, Extractor, ExtractorConfig, ExtractorKind, FeatureMatrix};
pub use model::{default_gamma, svm_train, Kernel, KernelSpec, SvmModel};
pub use pipeline::{feature_matrix, SvmPipeline, SVM_KIND};
pub use scaler::{fit_scaler, ScalerStats};
pub use search::{default_grid, hyperparam_search, stratified_folds, CvRow, GridCell, SearchResult, DEFAULT_C_GRID};
