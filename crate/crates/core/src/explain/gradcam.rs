use std::path::Path;

use lungxai_tensor::{no_grad, Tensor, Var};
use ndarray::{Array1, Array2, Ix4};
use serde::{Deserialize, Serialize};

use crate::datapipe::ImageTensor;
use crate::dense::{DenseBranchModel, CAM_LAYERS};
use crate::error::{invalid, Error, Result};
use crate::io::{Container, NamedArray};
use crate::svm::{Extractor, Kernel, SvmPipeline};

/// Max-normalised class-activation map over one layer's spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Array2<f64>,
    pub layer: String,
    pub class_idx: usize,
    /// Set when no location received positive evidence; values are all 0.
    pub all_zero: bool,
}

/// A model that can expose one feature map as a gradient leaf.
pub trait CamTarget {
    fn num_classes(&self) -> usize;

    fn cam_layers(&self) -> Vec<String>;

    /// Runs one image and returns the named feature map `[1, C, h, w]`
    /// as a leaf together with class scores `[1, K]` computed from it.
    fn forward_tapped(&self, image: &ImageTensor, layer: &str) -> Result<(Var, Var)>;
}

/// The four Grad-CAM steps on an activation leaf and a scalar score built
/// from it: gradients, spatially pooled channel weights, weighted channel
/// sum through ReLU, max-normalisation.
pub fn cam_from_parts(activation: &Var, score: &Var) -> Result<(Array2<f64>, bool)> {
    let a = activation
        .value()
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| invalid!("Grad-CAM needs a spatial [1, C, h, w] layer, got {:?}", activation.shape()))?;
    let (n, c, h, w) = a.dim();
    if n != 1 {
        return Err(invalid!("Grad-CAM explains one image at a time, got batch {n}"));
    }
    let grads = score.backward()?;
    let g = grads.get_or_zeros(activation);
    let g = g.view().into_dimensionality::<Ix4>().expect("same shape as activation");

    let weights: Array1<f64> = (0..c).map(|k| g.slice(ndarray::s![0, k, .., ..]).sum() / (h * w) as f64).collect();
    let mut cam = Array2::<f64>::zeros((h, w));
    for k in 0..c {
        cam.scaled_add(weights[k], &a.slice(ndarray::s![0, k, .., ..]));
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let max = cam.fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        cam.mapv_inplace(|v| v / max);
        Ok((cam, false))
    } else {
        cam.fill(0.0);
        Ok((cam, true))
    }
}

pub fn grad_cam(target: &dyn CamTarget, image: &ImageTensor, class_idx: usize, layer: &str) -> Result<Heatmap> {
    let k = target.num_classes();
    if class_idx >= k {
        return Err(invalid!("class index {class_idx} out of range for {k} classes"));
    }
    if !target.cam_layers().iter().any(|l| l == layer) {
        return Err(invalid!("layer {layer:?} has no gradient path; expected one of {:?}", target.cam_layers()));
    }
    let (activation, scores) = target.forward_tapped(image, layer)?;
    let score = scores.reshape(&[k])?.gather(&[class_idx])?.sum();
    let (values, all_zero) = cam_from_parts(&activation, &score)?;
    if all_zero {
        log::warn!("Grad-CAM for class {class_idx} at {layer} is all zero");
    }
    Ok(Heatmap {
        values,
        layer: layer.to_string(),
        class_idx,
        all_zero,
    })
}

impl CamTarget for DenseBranchModel {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn cam_layers(&self) -> Vec<String> {
        CAM_LAYERS.iter().map(|s| s.to_string()).collect()
    }

    fn forward_tapped(&self, image: &ImageTensor, layer: &str) -> Result<(Var, Var)> {
        let x = Var::constant(self.batch(&[image])?);
        let feats = no_grad(|| self.backbone_features(&x, false))?;
        let out = self.head_forward(&feats, Some(layer))?;
        let tap = out.tap.ok_or_else(|| invalid!("layer {layer:?} was not reached"))?;
        Ok((tap, out.logits))
    }
}

pub const SVM_CAM_LAYER: &str = "features";

/// The linear SVM decision composed with the extractor:
/// `w . scale(GAP(features)) + b`, differentiable in the feature map.
pub struct SvmCam<'a> {
    extractor: &'a Extractor,
    pipeline: &'a SvmPipeline,
    weights: Tensor,
}

impl<'a> SvmCam<'a> {
    pub fn new(extractor: &'a Extractor, pipeline: &'a SvmPipeline) -> Result<Self> {
        let Some(w) = pipeline.model.linear_weights() else {
            let gamma = match pipeline.model.kernel {
                Kernel::Rbf { gamma } => gamma,
                Kernel::Linear => unreachable!("linear models keep primal weights"),
            };
            return Err(Error::Unsupported(format!(
                "Grad-CAM needs a linear SVM; this model uses an RBF kernel (gamma {gamma}). Use SHAP to explain it"
            )));
        };
        if extractor.fingerprint() != pipeline.fingerprint {
            return Err(Error::Fingerprint {
                expected: pipeline.fingerprint.clone(),
                found: extractor.fingerprint().to_string(),
            });
        }
        Ok(Self {
            extractor,
            pipeline,
            weights: w.clone().into_dyn(),
        })
    }
}

impl CamTarget for SvmCam<'_> {
    fn num_classes(&self) -> usize {
        self.pipeline.model.num_classes()
    }

    fn cam_layers(&self) -> Vec<String> {
        vec![SVM_CAM_LAYER.to_string()]
    }

    fn forward_tapped(&self, image: &ImageTensor, _layer: &str) -> Result<(Var, Var)> {
        let map = no_grad(|| self.extractor.feature_map(&[image]))?.detach_leaf();
        let s = &self.pipeline.scaler;
        let inv_std = Array1::from_iter(s.std.iter().map(|v| 1.0 / v)).into_dyn();
        let shift = Array1::from_iter(s.mean.iter().zip(&s.std).map(|(m, v)| -m / v)).into_dyn();
        let z = map.global_avg_pool()?.mul_const(&inv_std)?.add_const(&shift)?;
        let bias = Array1::from(self.pipeline.model.bias.clone()).into_dyn();
        let scores = z.linear(&Var::constant(self.weights.clone()), Some(&Var::constant(bias)))?;
        Ok((map, scores))
    }
}

#[derive(Serialize, Deserialize)]
struct HeatmapMeta {
    layer: String,
    class_idx: usize,
    all_zero: bool,
}

pub const HEATMAP_KIND: &str = "heatmap";

impl Heatmap {
    pub fn save_grid(&self, path: &Path) -> Result<()> {
        let mut c = Container::new(
            HEATMAP_KIND,
            HeatmapMeta {
                layer: self.layer.clone(),
                class_idx: self.class_idx,
                all_zero: self.all_zero,
            },
        );
        let (h, w) = self.values.dim();
        c.push(NamedArray::f64("values", &[h, w], self.values.iter().copied().collect()));
        c.save(path)
    }

    pub fn load_grid(path: &Path) -> Result<Self> {
        let c: Container<HeatmapMeta> = Container::load(path, HEATMAP_KIND)?;
        let (shape, v) = c.f64_array("values", path)?;
        let &[h, w] = shape else {
            return Err(Error::format(path, "heatmap values must be 2-d"));
        };
        Ok(Self {
            values: Array2::from_shape_vec((h, w), v.to_vec()).expect("shape checked by container"),
            layer: c.meta.layer,
            class_idx: c.meta.class_idx,
            all_zero: c.meta.all_zero,
        })
    }
}
