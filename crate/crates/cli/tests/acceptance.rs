//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lungxai::blocks::{DenseBlock, DenseBlockSpec, Fpn, FpnSpec, LayerKind, SeBlock};
use lungxai::datapipe::{make_synthetic_dataset, smote_balance, SmoteConfig, SyntheticSpec};
use lungxai::dense::{focal_loss, focal_loss_value, FocalLossConfig};
use lungxai::explain::{
    cam_from_parts, grad_cam, kernel_shap, shap_exact, Background, ShapConfig, ShapMode, SvmCam, SVM_CAM_LAYER,
};
use lungxai::metrics::{classification_report, fmt2, roc_auc_ovr, ConfusionMatrix};
use lungxai::svm::{
    default_grid, extract_features, hyperparam_search, svm_train, Extractor, ExtractorConfig, ExtractorKind, Kernel,
    KernelSpec, SvmModel, SvmPipeline, DEFAULT_C_GRID,
};
use lungxai_tensor::{no_grad, Tensor, Var};
use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, Ix4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// pinned tolerances
const CE_TOL: f64 = 1e-9;
const FD_REL_TOL: f64 = 1e-4;
const FOCAL_HAND: f64 = 2.6341e-4;
const FOCAL_HAND_TOL: f64 = 1e-8;
const SMOTE_SEGMENT_TOL: f64 = 1e-6;
const SVM_ORACLE_TOL: f64 = 1e-9;
const SHAP_EXACT_TOL: f64 = 1e-6;
const SHAP_ADDITIVITY_TOL: f64 = 1e-3;
const CAM_HAND_TOL: f64 = 1e-9;
const CAM_LOCALITY_MIN: f64 = 0.9;
const CAM_SURROGATE_TOL: f64 = 1e-6;
const E2E_MIN_ACCURACY: f64 = 0.95;
const E2E_BUDGET: Duration = Duration::from_secs(600);

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-9
}

fn reconciliation() -> Check {
    let classes = ["Benign", "Malignant", "Normal"].map(String::from).to_vec();
    let cm = ConfusionMatrix::from_counts(classes, vec![vec![21, 0, 3], vec![0, 113, 0], vec![1, 1, 81]]).map_err(|e| e.to_string())?;
    let rep = classification_report(&cm).map_err(|e| e.to_string())?;
    let want = [["0.95", "0.88", "0.91"], ["0.99", "1.00", "1.00"], ["0.96", "0.98", "0.97"]];
    for (m, w) in rep.per_class.iter().zip(want) {
        let got = [fmt2(m.precision), fmt2(m.recall), fmt2(m.f1)];
        ensure!(got == w, "{}: {got:?} vs {w:?}", m.name);
    }
    ensure!(fmt2(rep.accuracy) == "0.98", "accuracy {}", fmt2(rep.accuracy));
    Ok("all 10 rounded values match".into())
}

fn headline_statement() -> Check {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).map_err(|e| format!("{}: {e}", readme.display()))?;
    ensure!(text.contains("not desk-scale reproducible"), "README lacks the non-reproducibility statement");
    let out = Command::new(env!("CARGO_BIN_EXE_lungxai")).arg("--help").output().map_err(|e| e.to_string())?;
    let help = String::from_utf8_lossy(&out.stdout);
    ensure!(help.contains("dense.weights") && help.contains("svm.weights"), "--help omits the pretrained-weights path");
    Ok("stated in README, full path in --help; not a numeric gate".into())
}

fn softmax_free_reference(p: &Array2<f64>, y: &[usize], alpha: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    for (i, &c) in y.iter().enumerate() {
        let pc = p[[i, c]];
        total += -alpha[c] * (1.0 - pc).powf(gamma) * pc.ln();
    }
    total / y.len() as f64
}

fn one_hot(y: &[usize], k: usize) -> Array2<f64> {
    Array2::from_shape_fn((y.len(), k), |(i, j)| f64::from(y[i] == j))
}

fn focal() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let err = |e: lungxai::Error| e.to_string();
    for _ in 0..50 {
        let n = rng.random_range(1..8);
        let mut p = Array2::<f64>::from_shape_fn((n, 3), |_| rng.random_range(0.05..1.0));
        for mut r in p.rows_mut() {
            let s = r.sum();
            r /= s;
        }
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let ce = -y.iter().enumerate().map(|(i, &c)| p[[i, c]].ln()).sum::<f64>() / n as f64;
        let l = focal_loss_value(p.view(), one_hot(&y, 3).view(), &FocalLossConfig::uniform(3, 0.0)).map_err(err)?;
        ensure!((l - ce).abs() < CE_TOL, "gamma 0: {l} vs CE {ce}");
    }
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let k = rng.random_range(2..5);
        let n = rng.random_range(1..4);
        let gamma = rng.random_range(0.0..5.0);
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..2.0)).collect();
        let mut p = Array2::<f64>::from_shape_fn((n, k), |_| rng.random_range(0.1..1.0));
        for mut r in p.rows_mut() {
            let s = r.sum();
            r /= s;
        }
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let cfg = FocalLossConfig { alpha: alpha.clone(), gamma };
        let leaf = Var::leaf(p.clone().into_dyn());
        let loss = focal_loss(&leaf, one_hot(&y, k).view(), &cfg).map_err(err)?;
        let grads = loss.backward().map_err(|e| e.to_string())?;
        let g = grads.get_or_zeros(&leaf);
        let h = 1e-6;
        for i in 0..n {
            for j in 0..k {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[[i, j]] += h;
                pm[[i, j]] -= h;
                let fd = (softmax_free_reference(&pp, &y, &alpha, gamma) - softmax_free_reference(&pm, &y, &alpha, gamma)) / (2.0 * h);
                let a = g[[i, j]];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
                if (a - fd).abs() > 1e-10 {
                    worst = worst.max(rel);
                }
                ensure!(rel < FD_REL_TOL || (a - fd).abs() <= 1e-10, "draw {draw}: {a} vs {fd}");
            }
        }
    }
    let cfg = FocalLossConfig { alpha: vec![0.25; 3], gamma: 2.0 };
    let hand = focal_loss_value(ndarray::array![[0.9, 0.05, 0.05]].view(), ndarray::array![[1.0, 0.0, 0.0]].view(), &cfg).map_err(err)?;
    ensure!((hand - FOCAL_HAND).abs() < FOCAL_HAND_TOL, "hand value {hand}");
    Ok(format!("CE within {CE_TOL:e}, worst FD rel {worst:.1e}, hand {hand:.4e}"))
}

fn se_block() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let err = |e: lungxai::Error| e.to_string();
    let se = SeBlock::zeroed(8, 4).map_err(err)?;
    let x = rand_tensor(&[2, 8, 3, 3], &mut rng);
    let y = se.forward(&Var::constant(x.clone())).map_err(err)?;
    ensure!(y.value() == &(x * 0.5), "zero weights do not give 0.5 x");

    let se = SeBlock::new(4, 2, &mut rng).map_err(err)?;
    let x = rand_tensor(&[2, 4, 3, 3], &mut rng);
    let r = rand_tensor(&[2, 4, 3, 3], &mut rng);
    let f = |x: &Tensor| -> f64 { (se.forward(&Var::constant(x.clone())).unwrap().value() * &r).sum() };
    let leaf = Var::leaf(x.clone());
    let out = se.forward(&leaf).map_err(err)?.mul(&Var::constant(r.clone())).map_err(|e| e.to_string())?.sum();
    let g = out.backward().map_err(|e| e.to_string())?.get_or_zeros(&leaf);
    for i in 0..x.len() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p.as_slice_mut().unwrap()[i] += 1e-6;
        m.as_slice_mut().unwrap()[i] -= 1e-6;
        let fd = (f(&p) - f(&m)) / 2e-6;
        ensure!(rel_close(g.as_slice().unwrap()[i], fd, FD_REL_TOL), "x[{i}]: {} vs {fd}", g.as_slice().unwrap()[i]);
    }

    for t in 0..100 {
        let c = [2, 4, 8][t % 3];
        let se = SeBlock::new(c, 2, &mut rng).map_err(err)?;
        let x = rand_tensor(&[2, c, 1 + t % 4, 3], &mut rng).mapv(|v| v * 5.0);
        let y = se.forward(&Var::constant(x.clone())).map_err(err)?;
        for (&a, &b) in y.value().iter().zip(x.iter()) {
            ensure!(a.abs() <= b.abs() && (b == 0.0 || a.signum() == b.signum()), "gate out of (0, 1): {a} from {b}");
        }
    }
    Ok("0.5 x exact, gradient checked, 100 gating draws bounded".into())
}

fn dense_connectivity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let err = |e: lungxai::Error| e.to_string();
    for _ in 0..20 {
        let (c0, k, l) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(0..4));
        let spec = DenseBlockSpec { input_channels: c0, growth_rate: k, num_layers: l, layer: LayerKind::Basic };
        let block = DenseBlock::new(spec, &mut rng);
        let y = block.forward(&Var::constant(rand_tensor(&[1, c0, 5, 4], &mut rng)), false).map_err(err)?;
        ensure!(y.shape()[1] == c0 + l * k, "C0={c0} k={k} L={l}: {} channels", y.shape()[1]);
    }
    let (c0, k, l) = (2, 3, 4);
    let block = DenseBlock::new(DenseBlockSpec { input_channels: c0, growth_rate: k, num_layers: l, layer: LayerKind::Basic }, &mut rng);
    let x = Var::constant(rand_tensor(&[1, c0, 6, 6], &mut rng));
    let (_, base) = block.forward_traced(&x, false, None).map_err(err)?;
    for j in 0..l {
        let (_, ablated) = block.forward_traced(&x, false, Some(j)).map_err(err)?;
        for later in j + 1..l {
            let lo = c0 + j * k;
            let b = base[later].value().view().into_dimensionality::<Ix4>().unwrap();
            let a = ablated[later].value().view().into_dimensionality::<Ix4>().unwrap();
            ensure!(b.slice(s![.., lo..lo + k, .., ..]) != a.slice(s![.., lo..lo + k, .., ..]), "ablating {j} left input of {later} intact");
        }
    }
    Ok("20 random blocks sized C0 + L k; ablation reaches every later input".into())
}

fn fpn() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..24 {
        let n = rng.random_range(1..4);
        let widths: Vec<usize> = (0..n).map(|_| rng.random_range(1..6)).collect();
        let pyr = rng.random_range(1..6);
        let mut sizes = vec![(rng.random_range(2..10), rng.random_range(2..10))];
        for _ in 1..n {
            let (h, w): (usize, usize) = *sizes.last().unwrap();
            sizes.push((h.div_ceil(2), w.div_ceil(2)));
        }
        sizes.reverse();
        let fpn = Fpn::new(FpnSpec { pyramid_channels: pyr, in_channels: widths.clone() }, &mut rng).map_err(|e| e.to_string())?;
        let levels: Vec<Var> = widths.iter().zip(&sizes).map(|(&c, &(h, w))| Var::constant(rand_tensor(&[1, c, h, w], &mut rng))).collect();
        let out = fpn.forward(&levels).map_err(|e| e.to_string())?;
        for (o, &(h, w)) in out.iter().zip(&sizes) {
            ensure!(o.shape() == [1, pyr, h, w], "level shape {:?}", o.shape());
        }
        let mut zeroed = levels.clone();
        for v in zeroed.iter_mut().take(n - 1) {
            *v = Var::constant(Tensor::zeros(v.value().raw_dim()));
        }
        let fused = fpn.forward(&zeroed).map_err(|e| e.to_string())?;
        let direct = fpn.smooth[n - 1]
            .forward(&fpn.laterals[n - 1].forward(&levels[n - 1]).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure!(fused[n - 1].value() == direct.value(), "zero-upper identity fails for widths {widths:?}");
    }
    Ok("24 randomized chains".into())
}

fn smote() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for set in 0..50 {
        let k = rng.random_range(1..4);
        let classes = rng.random_range(2..4);
        let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(k + 1..14)).collect();
        let d = rng.random_range(1..=64);
        let y: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let x = Array2::<f64>::from_shape_fn((y.len(), d), |_| rng.random_range(-2.0..2.0));
        let (xb, yb) = smote_balance(x.view(), &y, &SmoteConfig { k_neighbors: k, seed: set }).map_err(|e| e.to_string())?;
        let majority = *counts.iter().max().unwrap();
        for c in 0..classes {
            ensure!(yb.iter().filter(|&&l| l == c).count() == majority, "set {set}: class {c} not balanced");
        }
        for i in y.len()..yb.len() {
            let members: Vec<usize> = (0..y.len()).filter(|&j| y[j] == yb[i]).collect();
            let row = xb.row(i);
            let on_segment = members.iter().any(|&a| {
                let mut near: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&j| j != a)
                    .map(|&j| (x.row(a).iter().zip(x.row(j)).map(|(p, q)| (p - q).powi(2)).sum(), j))
                    .collect();
                near.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
                near.iter().take(k).any(|&(_, b)| {
                    let (ra, rb) = (x.row(a), x.row(b));
                    let den: f64 = ra.iter().zip(rb).map(|(p, q)| (q - p).powi(2)).sum();
                    let num: f64 = (0..d).map(|t| (row[t] - ra[t]) * (rb[t] - ra[t])).sum();
                    let t = if den > 0.0 { num / den } else { 0.0 };
                    (-1e-9..=1.0 + 1e-9).contains(&t) && (0..d).all(|c| (ra[c] + t * (rb[c] - ra[c]) - row[c]).abs() <= SMOTE_SEGMENT_TOL)
                })
            });
            ensure!(on_segment, "set {set}: row {i} is off every neighbour segment");
        }
    }
    Ok("50 imbalanced sets balanced exactly, synthetic rows on neighbour segments".into())
}

fn naive_decision(m: &SvmModel, x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), m.num_classes()));
    for n in 0..x.nrows() {
        for h in 0..m.num_classes() {
            let mut f = m.bias[h];
            for sv in 0..m.support_vectors.nrows() {
                let (a, b) = (m.support_vectors.row(sv), x.row(n));
                let kv = match m.kernel {
                    Kernel::Linear => a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>(),
                    Kernel::Rbf { gamma } => (-gamma * a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).exp(),
                };
                f += m.coef[[h, sv]] * kv;
            }
            out[[n, h]] = f;
        }
    }
    out
}

fn oracle_gap(m: &SvmModel, x: ArrayView2<f64>) -> Result<f64, String> {
    let fast = m.decision(x).map_err(|e| e.to_string())?;
    Ok(fast.iter().zip(&naive_decision(m, x)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn svm() -> Check {
    let names = |k: usize| (0..k).map(|c| format!("c{c}")).collect::<Vec<_>>();
    let hand = SvmModel::from_parts(Kernel::Linear, 1.0, names(1), ndarray::array![[1.0, 0.0]], ndarray::array![[1.0]], vec![-0.5])
        .map_err(|e| e.to_string())?;
    let v = hand.decision(ndarray::array![[2.0, 0.0]].view()).map_err(|e| e.to_string())?[[0, 0]];
    ensure!(v == 1.5, "single support vector gives {v}");

    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst: f64 = 0.0;
    for trial in 0..12 {
        let (k, d, per) = (rng.random_range(2..5), rng.random_range(1..6), rng.random_range(4..15));
        let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let spread = rng.random_range(0.3..3.0);
        let mut x = Array2::zeros((k * per, d));
        let mut y = Vec::new();
        for c in 0..k {
            for i in 0..per {
                for j in 0..d {
                    x[[c * per + i, j]] = centres[c][j] + rng.random_range(-spread..spread);
                }
                y.push(c);
            }
        }
        let spec = if trial % 2 == 0 { KernelSpec::Linear } else { KernelSpec::Rbf { gamma: None } };
        let m = svm_train(x.view(), &y, &names(k), spec, DEFAULT_C_GRID[trial % 5]).map_err(|e| e.to_string())?;
        let probes = Array2::from_shape_fn((20, d), |_| rng.random_range(-6.0..6.0));
        worst = worst.max(oracle_gap(&m, x.view())?).max(oracle_gap(&m, probes.view())?);
    }

    let n = 400;
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::new();
    for i in 0..n {
        let (a, b) = (if i % 2 == 0 { 1.0 } else { -1.0 }, if (i / 2) % 2 == 0 { 1.0 } else { -1.0 });
        x[[i, 0]] = a + rng.random_range(-0.35..0.35);
        x[[i, 1]] = b + rng.random_range(-0.35..0.35);
        y.push(usize::from(a * b > 0.0));
    }
    let r = hyperparam_search(x.view(), &y, &names(2), &default_grid(&DEFAULT_C_GRID), 5, 42).map_err(|e| e.to_string())?;
    ensure!(matches!(r.best.kernel, Kernel::Rbf { .. }), "XOR search picked {:?}", r.best.kernel);
    let spec = match r.best.kernel {
        Kernel::Rbf { gamma } => KernelSpec::Rbf { gamma: Some(gamma) },
        Kernel::Linear => KernelSpec::Linear,
    };
    let m = svm_train(x.view(), &y, &names(2), spec, r.best.c).map_err(|e| e.to_string())?;
    worst = worst.max(oracle_gap(&m, x.view())?);
    ensure!(worst < SVM_ORACLE_TOL, "decision differs from the naive sum by {worst:e}");
    Ok(format!(
        "hand 1.5 exact, 13 models within {worst:.1e}, XOR picks RBF (CV {:.3})",
        r.best.mean_accuracy
    ))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Shapley values from the subset formula over every coalition.
fn subset_shapley(f: &dyn Fn(ArrayView2<f64>) -> lungxai::Result<Array2<f64>>, x: ArrayView1<f64>, bg: &Background) -> Vec<f64> {
    let d = x.len();
    let value = |mask: u32| -> f64 {
        let mut rows = bg.rows.clone();
        for mut r in rows.rows_mut() {
            for j in 0..d {
                if mask >> j & 1 == 1 {
                    r[j] = x[j];
                }
            }
        }
        f(rows.view()).unwrap().column(0).iter().zip(&bg.weights).map(|(v, w)| v * w).sum()
    };
    let values: Vec<f64> = (0..1u32 << d).map(value).collect();
    (0..d)
        .map(|i| {
            (0..1u32 << d)
                .filter(|m| m >> i & 1 == 0)
                .map(|m| {
                    let s = m.count_ones() as usize;
                    factorial(s) * factorial(d - s - 1) / factorial(d) * (values[(m | 1 << i) as usize] - values[m as usize])
                })
                .sum()
        })
        .collect()
}

fn random_mlp(d: usize, rng: &mut impl Rng) -> impl Fn(ArrayView2<f64>) -> lungxai::Result<Array2<f64>> {
    let w1 = Array2::from_shape_fn((5, d), |_| rng.random_range(-1.5..1.5));
    let b1 = Array1::from_shape_fn(5, |_| rng.random_range(-0.5..0.5));
    let w2 = Array2::from_shape_fn((5, 1), |_| rng.random_range(-2.0..2.0));
    move |x: ArrayView2<f64>| Ok((x.dot(&w1.t()) + &b1).mapv(f64::tanh).dot(&w2))
}

fn random_background(n: usize, d: usize, rng: &mut impl Rng) -> Background {
    Background::uniform(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
}

fn shap() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let err = |e: lungxai::Error| e.to_string();
    let exact_cfg = ShapConfig { mode: ShapMode::Exact, ..Default::default() };
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let d = 1 + trial % 8;
        let f = random_mlp(d, &mut rng);
        let bg = random_background(1 + trial % 4, d, &mut rng);
        let x = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
        let e = kernel_shap(&f, x.view(), &bg, 0, &exact_cfg).map_err(err)?;
        for (a, b) in e.phi.iter().zip(subset_shapley(&f, x.view(), &bg)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst < SHAP_EXACT_TOL, "exact mode off enumeration by {worst:e}");

    let mut gap: f64 = 0.0;
    for _ in 0..3 {
        let f = random_mlp(24, &mut rng);
        let bg = random_background(5, 24, &mut rng);
        let x = Array1::from_shape_fn(24, |_| rng.random_range(-2.0..2.0));
        let e = kernel_shap(&f, x.view(), &bg, 0, &ShapConfig::default()).map_err(err)?;
        ensure!(!e.exact, "D = 24 should be sampled");
        gap = gap.max(e.additivity_gap());
    }
    ensure!(gap < SHAP_ADDITIVITY_TOL, "sampled additivity gap {gap:e}");

    // feature 2 ignored, features 0 and 1 symmetric
    let g = |x: ArrayView2<f64>| -> lungxai::Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((x.nrows(), 1), |(i, _)| (x[[i, 0]] * x[[i, 1]]).sin() + x[[i, 0]] + x[[i, 1]] + x[[i, 3]].powi(2)))
    };
    for _ in 0..10 {
        let v = rng.random_range(-2.0..2.0);
        let x = Array1::from(vec![v, v, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
        let mut rows = Array2::zeros((3, 4));
        for r in 0..3 {
            let b = rng.random_range(-1.0..1.0);
            rows.row_mut(r).assign(&Array1::from(vec![b, b, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]));
        }
        let bg = Background::uniform(rows).map_err(err)?;
        let e = shap_exact(&g, x.view(), &bg, 0).map_err(err)?;
        ensure!(e.phi[2] == 0.0, "dummy feature got {}", e.phi[2]);
        ensure!((e.phi[0] - e.phi[1]).abs() < 1e-12, "symmetric features differ: {:?}", e.phi);
        let k = kernel_shap(&g, x.view(), &bg, 0, &exact_cfg).map_err(err)?;
        ensure!(k.phi[2].abs() < 1e-9 && (k.phi[0] - k.phi[1]).abs() < 1e-9, "kernel exact mode breaks an axiom: {:?}", k.phi);
    }
    Ok(format!("exact within {worst:.1e} on 20 models, sampled gap {gap:.1e}, dummy and symmetry hold"))
}

fn gradcam() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let err = |e: lungxai::Error| e.to_string();
    for _ in 0..20 {
        let g = rng.random_range(0.1..3.0);
        let a = rand_tensor(&[1, 1, 5, 6], &mut rng);
        let leaf = Var::leaf(a.clone());
        let (cam, flag) = cam_from_parts(&leaf, &leaf.sum().scale(g)).map_err(err)?;
        ensure!(!flag, "hand case flagged");
        let max = a.iter().fold(0.0f64, |m, &v| m.max(v));
        for ((y, x), &v) in cam.indexed_iter() {
            ensure!((v - a[[0, 0, y, x]].max(0.0) / max).abs() < CAM_HAND_TOL, "hand case off at ({y}, {x})");
        }
    }

    let (h, w) = (8, 8);
    let mut least: f64 = 1.0;
    for trial in 0..40 {
        let quadrant = |y: usize, x: usize| (y >= h / 2) as usize * 2 + (x >= w / 2) as usize;
        let a = Array4::from_shape_fn((1, 4, h, w), |(_, k, y, x)| {
            if quadrant(y, x) == k {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(0.0..0.01)
            }
        });
        let target = trial % 4;
        let mask = Array4::from_shape_fn((1, 4, h, w), |(_, _, y, x)| f64::from(quadrant(y, x) == target));
        let leaf = Var::leaf(a.into_dyn());
        let masked = leaf.mul_const(&mask.into_dyn()).map_err(|e| e.to_string())?;
        let score = masked.mul(&masked).map_err(|e| e.to_string())?.sum();
        let (cam, _) = cam_from_parts(&leaf, &score).map_err(err)?;
        let (ty, tx) = (target / 2 * h / 2, target % 2 * w / 2);
        least = least.min(cam.slice(s![ty..ty + h / 2, tx..tx + w / 2]).sum() / cam.sum());
    }
    ensure!(least >= CAM_LOCALITY_MIN, "quadrant mass {least:.3}");

    let ex = Extractor::new(ExtractorConfig { kind: ExtractorKind::Toy, input_size: 64, seed: 42 }, None).map_err(err)?;
    let ds = make_synthetic_dataset(&SyntheticSpec { per_class: 6, ..Default::default() }).map_err(err)?;
    let feats = extract_features(&ds.images(), &ex).map_err(err)?;
    let p = SvmPipeline::fit(ex.config.clone(), &feats, &ds.labels(), &ds.classes, KernelSpec::Linear, 1.0).map_err(err)?;
    let cam = SvmCam::new(&ex, &p).map_err(err)?;
    let wt = p.model.linear_weights().ok_or("linear model without weights")?;
    let (k, d) = wt.dim();
    let wf = Array2::from_shape_fn((k, d), |(c, j)| wt[[c, j]] / p.scaler.std[j]);
    let bf = Array1::from_shape_fn(k, |c| p.model.bias[c] - (0..d).map(|j| wt[[c, j]] * p.scaler.mean[j] / p.scaler.std[j]).sum::<f64>());
    let img = &ds.samples[7].image;
    let mut gap: f64 = 0.0;
    for class in 0..k {
        let hm = grad_cam(&cam, img, class, SVM_CAM_LAYER).map_err(err)?;
        let leaf = no_grad(|| ex.feature_map(&[img])).map_err(err)?.detach_leaf();
        let logits = leaf
            .global_avg_pool()
            .and_then(|g| g.linear(&Var::constant(wf.clone().into_dyn()), Some(&Var::constant(bf.clone().into_dyn()))))
            .map_err(|e| e.to_string())?;
        let score = logits.reshape(&[k]).and_then(|l| l.gather(&[class])).map_err(|e| e.to_string())?.sum();
        let (reference, _) = cam_from_parts(&leaf, &score).map_err(err)?;
        gap = hm.values.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(gap, f64::max);
    }
    ensure!(gap < CAM_SURROGATE_TOL, "surrogate differs from the folded head by {gap:e}");
    Ok(format!("hand case exact, quadrant mass >= {least:.3}, surrogate within {gap:.1e}"))
}

fn auc() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let k = rng.random_range(2..=4);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let levels = rng.random_range(2..12);
        let scores = Array2::from_shape_fn((n, k), |_| rng.random_range(0..levels) as f64 / levels as f64);
        for c in 0..k {
            let (mut twice, mut pairs) = (0u64, 0u64);
            for i in 0..n {
                for j in 0..n {
                    if y[i] == c && y[j] != c {
                        pairs += 1;
                        twice += match scores[[i, c]].partial_cmp(&scores[[j, c]]) {
                            Some(std::cmp::Ordering::Greater) => 2,
                            Some(std::cmp::Ordering::Equal) => 1,
                            _ => 0,
                        };
                    }
                }
            }
            let want = (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64);
            let got = roc_auc_ovr(&y, scores.view(), c).map_err(|e| e.to_string())?.auc;
            ensure!(got == want, "sweep {got:?} vs pairwise {want:?}");
        }
    }
    let y = [0, 0, 1, 1];
    let sep = Array2::from_shape_vec((4, 2), vec![0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9]).unwrap();
    let flat = Array2::from_elem((4, 2), 0.5);
    let a = roc_auc_ovr(&y, sep.view(), 0).map_err(|e| e.to_string())?.auc;
    let b = roc_auc_ovr(&y, flat.view(), 0).map_err(|e| e.to_string())?.auc;
    ensure!(a == Some(1.0) && b == Some(0.5), "separable {a:?}, constant {b:?}");
    Ok("100 score sets equal the pairwise oracle exactly; separable 1.0, constant 0.5".into())
}

fn lungxai(args: &[&str], out_root: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lungxai"))
        .args(args)
        .env_remove("LUNGXAI_OUT")
        .env("RUST_LOG", "warn")
        .current_dir(out_root)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("lungxai {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let start = Instant::now();
    let out_root = dir.path().join("runs");
    let stdout = lungxai(
        &["prepare", "--config", config.to_str().unwrap(), "--out", out_root.to_str().unwrap()],
        dir.path(),
    )?;
    let run = stdout.lines().last().ok_or("prepare printed no run directory")?.trim().to_string();
    let r = run.as_str();
    lungxai(&["train", "--run", r, "--branch", "dense"], dir.path())?;
    lungxai(&["train", "--run", r, "--branch", "svm"], dir.path())?;
    lungxai(&["evaluate", "--run", r], dir.path())?;
    lungxai(&["explain", "--run", r, "--method", "gradcam", "--index", "19"], dir.path())?;
    lungxai(&["explain", "--run", r, "--method", "shap", "--index", "19"], dir.path())?;
    let elapsed = start.elapsed();
    ensure!(elapsed < E2E_BUDGET, "chain took {elapsed:?}");

    let run = Path::new(r);
    let summary = json(&run.join("data/summary.json"))?;
    let total: u64 = ["train", "val", "test"].iter().map(|s| summary["splits"][s]["count"].as_u64().unwrap_or(0)).sum();
    ensure!(total == 300 && summary["image_size"] == 64, "dataset is {total} images at {}", summary["image_size"]);
    let mut accs = Vec::new();
    for b in ["dense", "svm"] {
        let m = json(&run.join(format!("eval/{b}-test/metrics.json")))?;
        let acc = m["accuracy"].as_f64().ok_or("no accuracy")?;
        ensure!(acc >= E2E_MIN_ACCURACY, "{b} test accuracy {acc}");
        accs.push(acc);
        let cams = json(&run.join(format!("explain/{b}-gradcam/gradcam.json")))?;
        let items = cams["items"].as_array().ok_or("no Grad-CAM items")?;
        ensure!(!items.is_empty() && items.iter().all(|i| i["all_zero"] == false), "{b} Grad-CAM flagged");
    }
    let shap = json(&run.join("explain/svm-shap/samples.json"))?;
    ensure!(shap["all_zero"] == false, "SHAP attributions all zero");
    let gaps = shap["items"].as_array().ok_or("no SHAP items")?;
    ensure!(
        gaps.iter().all(|i| i["additivity_gap"].as_f64().is_some_and(|g| g < SHAP_ADDITIVITY_TOL)),
        "SHAP additivity broken"
    );
    Ok(format!(
        "{:.1}s, dense {:.3}, svm {:.3}, Grad-CAM and SHAP non-flagged",
        elapsed.as_secs_f64(),
        accs[0],
        accs[1]
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("metrics reconciliation", reconciliation),
        ("headline non-reproducibility stated", headline_statement),
        ("focal loss", focal),
        ("SE block", se_block),
        ("dense connectivity", dense_connectivity),
        ("FPN", fpn),
        ("SMOTE", smote),
        ("SVM", svm),
        ("Kernel SHAP", shap),
        ("Grad-CAM", gradcam),
        ("AUC", auc),
        ("end-to-end desk scale", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
