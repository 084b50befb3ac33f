use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::features::{ExtractorConfig, FeatureMatrix};
use super::model::{Kernel, SvmModel};
use super::scaler::{fit_scaler, ScalerStats};
use super::search::CvRow;
use crate::error::{Error, Result};
use crate::io::{Container, NamedArray};

pub const SVM_KIND: &str = "svm-model";

/// Scaler, SVM and the identity of the extractor whose features it accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmPipeline {
    pub extractor: ExtractorConfig,
    pub fingerprint: String,
    pub scaler: ScalerStats,
    pub model: SvmModel,
    pub cv_table: Vec<CvRow>,
}

impl SvmPipeline {
    /// Fits the scaler on `train` and an SVM on the scaled rows.
    pub fn fit(
        extractor: ExtractorConfig,
        train: &FeatureMatrix,
        labels: &[usize],
        classes: &[String],
        kernel: super::KernelSpec,
        c: f64,
    ) -> Result<Self> {
        let scaler = fit_scaler(train.data.view())?;
        let z = scaler.apply(train.data.view())?;
        let model = super::svm_train(z.view(), labels, classes, kernel, c)?;
        Ok(Self {
            extractor,
            fingerprint: train.fingerprint.clone(),
            scaler,
            model,
            cv_table: Vec::new(),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.model.classes
    }

    fn check(&self, f: &FeatureMatrix) -> Result<()> {
        if f.fingerprint != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: self.fingerprint.clone(),
                found: f.fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn scale(&self, f: &FeatureMatrix) -> Result<Array2<f64>> {
        self.check(f)?;
        self.scaler.apply(f.data.view())
    }

    pub fn decision(&self, f: &FeatureMatrix) -> Result<Array2<f64>> {
        self.model.decision(self.scale(f)?.view())
    }

    pub fn predict(&self, f: &FeatureMatrix) -> Result<Vec<usize>> {
        self.model.predict(self.scale(f)?.view())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let m = &self.model;
        let mut c = Container::new(
            SVM_KIND,
            Meta {
                classes: m.classes.clone(),
                kernel: m.kernel,
                c: m.c,
                fingerprint: self.fingerprint.clone(),
                extractor: self.extractor.clone(),
                zero_variance: self.scaler.zero_variance.clone(),
                cv_table: self.cv_table.clone(),
            },
        );
        let d = self.scaler.dims();
        c.push(NamedArray::f64("scaler_mean", &[d], self.scaler.mean.clone()));
        c.push(NamedArray::f64("scaler_std", &[d], self.scaler.std.clone()));
        let (n_sv, dims) = m.support_vectors.dim();
        c.push(NamedArray::f64("support_vectors", &[n_sv, dims], m.support_vectors.iter().copied().collect()));
        c.push(NamedArray::f64("coef", &[m.num_classes(), n_sv], m.coef.iter().copied().collect()));
        c.push(NamedArray::f64("bias", &[m.num_classes()], m.bias.clone()));
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Container<Meta> = Container::load(path, SVM_KIND)?;
        let mat = |name: &str| -> Result<Array2<f64>> {
            let (shape, v) = c.f64_array(name, path)?;
            match shape {
                &[r, k] => Ok(Array2::from_shape_vec((r, k), v.to_vec()).expect("shape checked by container")),
                _ => Err(Error::format(path, format!("{name} must be 2-d"))),
            }
        };
        let vec = |name: &str| -> Result<Vec<f64>> { Ok(c.f64_array(name, path)?.1.to_vec()) };
        let scaler = ScalerStats {
            mean: vec("scaler_mean")?,
            std: vec("scaler_std")?,
            zero_variance: c.meta.zero_variance.clone(),
        };
        let model = SvmModel::from_parts(
            c.meta.kernel,
            c.meta.c,
            c.meta.classes.clone(),
            mat("support_vectors")?,
            mat("coef")?,
            vec("bias")?,
        )
        .map_err(|e| Error::format(path, e.to_string()))?;
        if scaler.dims() != model.dims() || scaler.std.len() != scaler.dims() || scaler.zero_variance.len() != scaler.dims() {
            return Err(Error::format(path, "scaler and model widths disagree"));
        }
        Ok(Self {
            extractor: c.meta.extractor,
            fingerprint: c.meta.fingerprint,
            scaler,
            model,
            cv_table: c.meta.cv_table,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    classes: Vec<String>,
    kernel: Kernel,
    c: f64,
    fingerprint: String,
    extractor: ExtractorConfig,
    zero_variance: Vec<bool>,
    cv_table: Vec<CvRow>,
}

/// Convenience for callers holding a raw view and a fingerprint.
pub fn feature_matrix(data: ArrayView2<f64>, fingerprint: &str) -> FeatureMatrix {
    FeatureMatrix {
        data: data.to_owned(),
        fingerprint: fingerprint.to_string(),
    }
}
