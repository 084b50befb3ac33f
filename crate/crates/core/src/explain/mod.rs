//! Grad-CAM heatmaps for both branches and Kernel SHAP attributions over
//! deep features.

mod gradcam;
mod overlay;
mod plot;
mod shap;

pub use gradcam::{cam_from_parts, grad_cam, CamTarget, Heatmap, SvmCam, HEATMAP_KIND, SVM_CAM_LAYER};
pub use overlay::{colorize, overlay, save_png, to_rgb_image, viridis};
pub use plot::{force_data, render_force, render_summary, summary_data, write_plot_data, Contribution, ForceData, RankedFeature, SummaryData};
pub use shap::{kernel_shap, kmeans_background, shap_exact, Background, ShapConfig, ShapExplanation, ShapMode, MAX_EXACT_DIMS};
