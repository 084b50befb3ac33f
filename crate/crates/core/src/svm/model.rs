use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::smo::{solve, SmoConfig};
use crate::error::{invalid, Error, Result};

/// Kernel as requested; an RBF width of `None` resolves to `1 / (D var(X))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Linear,
    Rbf {
        #[serde(default)]
        gamma: Option<f64>,
    },
}

impl KernelSpec {
    pub fn resolve(self, x: ArrayView2<f64>) -> Kernel {
        match self {
            KernelSpec::Linear => Kernel::Linear,
            KernelSpec::Rbf { gamma: Some(g) } => Kernel::Rbf { gamma: g },
            KernelSpec::Rbf { gamma: None } => Kernel::Rbf {
                gamma: default_gamma(x),
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
        }
    }
}

pub fn default_gamma(x: ArrayView2<f64>) -> f64 {
    let var = if x.is_empty() { 0.0 } else { x.var(0.0) };
    if var > 0.0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    /// `K[i, j] = k(a_i, b_j)`.
    pub fn matrix(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        match *self {
            Kernel::Linear => a.dot(&b.t()),
            Kernel::Rbf { .. } => Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| self.eval(a.row(i), b.row(j))),
        }
    }
}

/// One-vs-rest kernel SVM. Head `k` scores
/// `f_k(x) = sum_s coef[k, s] K(sv_s, x) + bias[k]` with `coef = alpha y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub classes: Vec<String>,
    pub support_vectors: Array2<f64>,
    pub coef: Array2<f64>,
    pub bias: Vec<f64>,
    primal: Option<Array2<f64>>,
}

impl SvmModel {
    pub fn from_parts(
        kernel: Kernel,
        c: f64,
        classes: Vec<String>,
        support_vectors: Array2<f64>,
        coef: Array2<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let k = classes.len();
        if support_vectors.nrows() == 0 {
            return Err(invalid!("an SVM needs at least one support vector"));
        }
        if coef.dim() != (k, support_vectors.nrows()) || bias.len() != k {
            return Err(invalid!(
                "coef {:?} and bias {} do not match {k} classes and {} support vectors",
                coef.dim(),
                bias.len(),
                support_vectors.nrows()
            ));
        }
        let primal = matches!(kernel, Kernel::Linear).then(|| coef.dot(&support_vectors));
        Ok(Self {
            kernel,
            c,
            classes,
            support_vectors,
            coef,
            bias,
            primal,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dims(&self) -> usize {
        self.support_vectors.ncols()
    }

    /// Primal weights `[K, D]`; present for the linear kernel only.
    pub fn linear_weights(&self) -> Option<&Array2<f64>> {
        self.primal.as_ref()
    }

    /// Per-class decision scores `[N, K]`.
    pub fn decision(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dims() {
            return Err(invalid!("model expects {} features, got {}", self.dims(), x.ncols()));
        }
        let mut s = match &self.primal {
            Some(w) => x.dot(&w.t()),
            None => self.kernel.matrix(x, self.support_vectors.view()).dot(&self.coef.t()),
        };
        s += &Array1::from(self.bias.clone());
        Ok(s)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let s = self.decision(x)?;
        Ok(s.rows().into_iter().map(|r| crate::metrics::argmax(&r.to_vec())).collect())
    }
}

/// Trains one binary head per class on a precomputed Gram matrix, keeping
/// every row with a nonzero multiplier in any head.
pub(crate) fn train_on_gram(
    gram: ArrayView2<f64>,
    x: ArrayView2<f64>,
    y: &[usize],
    classes: &[String],
    kernel: Kernel,
    c: f64,
) -> Result<SvmModel> {
    let k = classes.len();
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid!("C must be positive and finite, got {c}"));
    }
    let mut counts = vec![0usize; k];
    for &l in y {
        *counts.get_mut(l).ok_or_else(|| invalid!("label {l} out of range for {k} classes"))? += 1;
    }
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::Data("SVM training needs at least two classes present".into()));
    }
    if let Some(missing) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {} has no training samples", classes[missing])));
    }
    let cfg = SmoConfig::default();
    let mut alphas = Vec::with_capacity(k);
    let mut bias = Vec::with_capacity(k);
    for cls in 0..k {
        let yb: Vec<f64> = y.iter().map(|&l| if l == cls { 1.0 } else { -1.0 }).collect();
        let sol = solve(gram, &yb, c, &cfg);
        let signed: Vec<f64> = sol.alpha.iter().zip(&yb).map(|(a, s)| a * s).collect();
        alphas.push(signed);
        bias.push(-sol.rho);
    }
    let sv: Vec<usize> = (0..y.len()).filter(|&i| alphas.iter().any(|a| a[i] != 0.0)).collect();
    if sv.is_empty() {
        return Err(Error::Diverged("SVM training produced no support vectors".into()));
    }
    let support_vectors = x.select(Axis(0), &sv);
    let coef = Array2::from_shape_fn((k, sv.len()), |(h, s)| alphas[h][sv[s]]);
    SvmModel::from_parts(kernel, c, classes.to_vec(), support_vectors, coef, bias)
}

pub fn svm_train(x: ArrayView2<f64>, y: &[usize], classes: &[String], kernel: KernelSpec, c: f64) -> Result<SvmModel> {
    if x.nrows() != y.len() {
        return Err(invalid!("{} rows but {} labels", x.nrows(), y.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("SVM input contains non-finite values"));
    }
    let kernel = kernel.resolve(x);
    let gram = kernel.matrix(x, x);
    train_on_gram(gram.view(), x, y, classes, kernel, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn single_support_vector_hand_value() {
        let m = SvmModel::from_parts(Kernel::Linear, 1.0, names(1), array![[1.0, 0.0]], array![[1.0]], vec![-0.5]).unwrap();
        assert_eq!(m.decision(array![[2.0, 0.0]].view()).unwrap()[[0, 0]], 1.5);
        // orthogonal input scores the bias
        assert_eq!(m.decision(array![[0.0, 3.0]].view()).unwrap()[[0, 0]], -0.5);
        assert!(m.decision(array![[1.0, 2.0, 3.0]].view()).is_err());
    }

    #[test]
    fn rbf_self_similarity() {
        let m = SvmModel::from_parts(Kernel::Rbf { gamma: 0.7 }, 1.0, names(1), array![[0.3, -1.2]], array![[1.0]], vec![0.0]).unwrap();
        assert_eq!(m.decision(array![[0.3, -1.2]].view()).unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = array![[0.0], [1.0]];
        let err = svm_train(x.view(), &[0, 0], &names(1), KernelSpec::Linear, 1.0).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn default_gamma_of_constant_input() {
        assert_eq!(default_gamma(Array2::<f64>::ones((3, 2)).view()), 1.0);
        assert_eq!(default_gamma(array![[0.0, 2.0]].view()), 0.5);
    }
}
