use lungxai::datapipe::{make_synthetic_dataset, ImageTensor, SyntheticSpec};
use lungxai::dense::{build_model, DenseBackbone, DenseBranchConfig, DenseBranchModel};
use lungxai::explain::*;
use lungxai::svm::*;
use lungxai::{Error, Result};
use lungxai_tensor::{no_grad, Tensor, Var};
use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_dense() -> DenseBranchModel {
    build_model(&DenseBranchConfig {
        input_size: 64,
        backbone: DenseBackbone::Toy,
        freeze_backbone: true,
        num_classes: 3,
        se_ratio: 16,
        pyramid_channels: 32,
        fpn_levels: 2,
        seed: 5,
    })
    .unwrap()
}

fn sample_image(seed: u64) -> ImageTensor {
    let ds = make_synthetic_dataset(&SyntheticSpec { per_class: 2, seed, ..Default::default() }).unwrap();
    ds.samples[0].image.clone()
}

// ---------- Grad-CAM ----------

#[test]
fn single_channel_hand_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let g = rng.random_range(0.1..3.0);
        let a = Tensor::from_shape_fn(IxDyn(&[1, 1, 5, 6]), |_| rng.random_range(-1.0..1.0));
        let leaf = Var::leaf(a.clone());
        let (cam, flag) = cam_from_parts(&leaf, &leaf.sum().scale(g)).unwrap();
        assert!(!flag);
        // weight g, map relu(g A), normalised: relu(A) / max(A)
        let max = a.iter().fold(0.0f64, |m, &v| m.max(v));
        for ((y, x), &v) in cam.indexed_iter() {
            let want = a[[0, 0, y, x]].max(0.0) / max;
            assert!((v - want).abs() < 1e-9);
        }
        // a negative gradient flips which side survives
        let (neg, _) = cam_from_parts(&leaf, &leaf.sum().scale(-g)).unwrap();
        let min = a.iter().fold(0.0f64, |m, &v| m.min(v));
        for ((y, x), &v) in neg.indexed_iter() {
            assert!((v - a[[0, 0, y, x]].min(0.0) / min).abs() < 1e-9);
        }
    }
}

#[test]
fn heat_concentrates_on_the_scored_quadrant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (8, 8);
    for trial in 0..40 {
        // channel k lights up quadrant k over weak background activity
        let mut a = Array4::<f64>::zeros((1, 4, h, w));
        for k in 0..4 {
            for y in 0..h {
                for x in 0..w {
                    let q = (y >= h / 2) as usize * 2 + (x >= w / 2) as usize;
                    a[[0, k, y, x]] = if q == k { rng.random_range(0.5..1.5) } else { rng.random_range(0.0..0.01) };
                }
            }
        }
        let target = trial % 4;
        let mask = Array4::from_shape_fn((1, 4, h, w), |(_, _, y, x)| {
            f64::from((y >= h / 2) as usize * 2 + (x >= w / 2) as usize == target)
        });
        let leaf = Var::leaf(a.into_dyn());
        let masked = leaf.mul_const(&mask.into_dyn()).unwrap();
        let score = masked.mul(&masked).unwrap().sum().scale(0.5);
        let (cam, flag) = cam_from_parts(&leaf, &score).unwrap();
        assert!(!flag);
        let (ty, tx) = (target / 2 * h / 2, target % 2 * w / 2);
        let inside = cam.slice(s![ty..ty + h / 2, tx..tx + w / 2]).sum();
        assert!(inside / cam.sum() >= 0.9, "trial {trial}: {}", inside / cam.sum());
    }
}

#[test]
fn score_without_a_path_is_flagged() {
    let a = Var::leaf(Tensor::from_elem(IxDyn(&[1, 2, 3, 3]), 1.0));
    let other = Var::leaf(Tensor::from_elem(IxDyn(&[2]), 1.0));
    let (cam, flag) = cam_from_parts(&a, &other.sum()).unwrap();
    assert!(flag);
    assert!(cam.iter().all(|&v| v == 0.0));
    let flat = Var::leaf(Tensor::from_elem(IxDyn(&[1, 4]), 1.0));
    assert!(cam_from_parts(&flat, &flat.sum()).is_err());
    let batch = Var::leaf(Tensor::from_elem(IxDyn(&[2, 1, 3, 3]), 1.0));
    assert!(cam_from_parts(&batch, &batch.sum()).is_err());
}

#[test]
fn dense_branch_layers() {
    let model = toy_dense();
    let img = sample_image(3);
    for layer in ["backbone", "se", "fpn"] {
        let hm = grad_cam(&model, &img, 1, layer).unwrap();
        assert_eq!(hm.values.dim(), (8, 8));
        assert_eq!(hm.layer, layer);
        if !hm.all_zero {
            let max = hm.values.fold(0.0f64, |m, &v| m.max(v));
            assert_eq!(max, 1.0);
        }
        assert!(hm.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    assert!(grad_cam(&model, &img, 3, "fpn").is_err());
    assert!(grad_cam(&model, &img, 0, "head").is_err());
}

#[test]
fn full_size_dense_map_is_seven_by_seven() {
    let model = build_model(&DenseBranchConfig { seed: 3, ..Default::default() }).unwrap();
    let img = ImageTensor::from_shape_fn((256, 256, 3), |(y, x, _)| ((x * y) % 13) as f32 / 13.0);
    let hm = grad_cam(&model, &img, 0, "backbone").unwrap();
    assert_eq!(hm.values.dim(), (7, 7));
}

fn toy_extractor() -> Extractor {
    Extractor::new(ExtractorConfig { kind: ExtractorKind::Toy, input_size: 64, seed: 42 }, None).unwrap()
}

fn linear_pipeline(ex: &Extractor, kernel: KernelSpec) -> SvmPipeline {
    let ds = make_synthetic_dataset(&SyntheticSpec { per_class: 6, ..Default::default() }).unwrap();
    let f = extract_features(&ds.images(), ex).unwrap();
    SvmPipeline::fit(ex.config.clone(), &f, &ds.labels(), &ds.classes, kernel, 1.0).unwrap()
}

#[test]
fn svm_surrogate_equals_the_folded_dense_head() {
    let ex = toy_extractor();
    let p = linear_pipeline(&ex, KernelSpec::Linear);
    let cam = SvmCam::new(&ex, &p).unwrap();
    let img = sample_image(11);

    // W' = W / s, b' = b - W (mu / s)
    let w = p.model.linear_weights().unwrap();
    let (k, d) = w.dim();
    let mut wf = Array2::zeros((k, d));
    let mut bf = Array1::from(p.model.bias.clone());
    for c in 0..k {
        for j in 0..d {
            wf[[c, j]] = w[[c, j]] / p.scaler.std[j];
            bf[c] -= w[[c, j]] * p.scaler.mean[j] / p.scaler.std[j];
        }
    }
    let mut flagged = 0;
    for class in 0..k {
        let hm = grad_cam(&cam, &img, class, SVM_CAM_LAYER).unwrap();
        assert_eq!(hm.values.dim(), (8, 8));
        flagged += usize::from(hm.all_zero);
        let leaf = no_grad(|| ex.feature_map(&[&img])).unwrap().detach_leaf();
        let logits = leaf
            .global_avg_pool()
            .unwrap()
            .linear(&Var::constant(wf.clone().into_dyn()), Some(&Var::constant(bf.clone().into_dyn())))
            .unwrap();
        let score = logits.reshape(&[k]).unwrap().gather(&[class]).unwrap().sum();
        let (reference, _) = cam_from_parts(&leaf, &score).unwrap();
        for (a, b) in hm.values.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
    assert!(flagged < k);
    assert!(grad_cam(&cam, &img, 0, "backbone").is_err());
}

#[test]
fn svm_surrogate_edge_cases() {
    let ex = toy_extractor();
    let mut p = linear_pipeline(&ex, KernelSpec::Linear);
    let m = &p.model;
    p.model = SvmModel::from_parts(
        Kernel::Linear,
        m.c,
        m.classes.clone(),
        m.support_vectors.clone(),
        Array2::zeros(m.coef.dim()),
        m.bias.clone(),
    )
    .unwrap();
    let hm = grad_cam(&SvmCam::new(&ex, &p).unwrap(), &sample_image(4), 0, SVM_CAM_LAYER).unwrap();
    assert!(hm.all_zero);
    assert!(hm.values.iter().all(|&v| v == 0.0));

    let rbf = linear_pipeline(&ex, KernelSpec::Rbf { gamma: None });
    assert!(matches!(SvmCam::new(&ex, &rbf), Err(Error::Unsupported(msg)) if msg.contains("SHAP")));

    let other = Extractor::new(ExtractorConfig { kind: ExtractorKind::Toy, input_size: 64, seed: 43 }, None).unwrap();
    assert!(matches!(SvmCam::new(&other, &p), Err(Error::Fingerprint { .. })));
}

#[test]
fn heatmap_grid_round_trip() {
    let hm = Heatmap { values: Array2::from_shape_fn((7, 7), |(y, x)| (y * 7 + x) as f64 / 48.0), layer: "se".into(), class_idx: 2, all_zero: false };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cam.bin");
    hm.save_grid(&path).unwrap();
    assert_eq!(Heatmap::load_grid(&path).unwrap(), hm);
}

#[test]
fn overlay_blending() {
    let hm = Heatmap { values: Array2::from_shape_fn((7, 7), |(y, x)| ((y + x) % 5) as f64 / 4.0), layer: "fpn".into(), class_idx: 0, all_zero: false };
    let img = ImageTensor::from_shape_fn((256, 256, 3), |(y, x, c)| ((y + 2 * x + c) % 255) as f32 / 255.0);
    assert_eq!(overlay(&hm, &img, 0.0).unwrap(), img);
    let full = overlay(&hm, &img, 1.0).unwrap();
    assert_eq!(full.dim(), (256, 256, 3));
    assert_eq!(full, colorize(lungxai::datapipe::resize_plane(hm.values.view(), 256, 256).view()));
    let half = overlay(&hm, &img, 0.4).unwrap();
    for ((a, b), c) in half.iter().zip(&img).zip(&full) {
        assert!((a - (0.6 * b + 0.4 * c)).abs() < 1e-6);
    }
    assert!(overlay(&hm, &img, 1.5).is_err());
    assert!(overlay(&hm, &img, -0.1).is_err());
    assert!(overlay(&hm, &ImageTensor::zeros((8, 8, 1)), 0.5).is_err());
    assert_eq!(viridis(0.0), viridis(-1.0));
    assert_ne!(viridis(0.0), viridis(1.0));
}

// ---------- SHAP ----------

fn columns(out: Vec<f64>) -> Array2<f64> {
    let n = out.len();
    let mut a = Array2::zeros((n, 2));
    a.column_mut(1).assign(&Array1::from(out));
    a
}

/// Random one-hidden-layer tanh network; output column 1 is the explained one.
fn random_model(d: usize, rng: &mut impl Rng) -> impl Fn(ArrayView2<f64>) -> Result<Array2<f64>> {
    let hdim = 6;
    let w1 = Array2::from_shape_fn((hdim, d), |_| rng.random_range(-1.5..1.5));
    let b1 = Array1::from_shape_fn(hdim, |_| rng.random_range(-0.5..0.5));
    let w2 = Array1::from_shape_fn(hdim, |_| rng.random_range(-2.0..2.0));
    move |x: ArrayView2<f64>| {
        let hidden = (x.dot(&w1.t()) + &b1).mapv(f64::tanh);
        Ok(columns(hidden.dot(&w2).to_vec()))
    }
}

/// Shapley values by averaging marginal contributions over every ordering.
fn permutation_shapley<F: Fn(ArrayView2<f64>) -> Result<Array2<f64>>>(f: &F, x: ArrayView1<f64>, bg: &Background) -> Vec<f64> {
    let d = x.len();
    let value = |set: &[bool]| -> f64 {
        let mut rows = bg.rows.clone();
        for mut r in rows.rows_mut() {
            for j in 0..d {
                if set[j] {
                    r[j] = x[j];
                }
            }
        }
        let out = f(rows.view()).unwrap();
        out.column(1).iter().zip(&bg.weights).map(|(v, w)| v * w).sum()
    };
    let mut phi = vec![0.0; d];
    let mut perm: Vec<usize> = (0..d).collect();
    let mut count = 0.0;
    loop {
        let mut set = vec![false; d];
        let mut prev = value(&set);
        for &j in &perm {
            set[j] = true;
            let next = value(&set);
            phi[j] += next - prev;
            prev = next;
        }
        count += 1.0;
        // next lexicographic permutation
        let Some(i) = (0..d.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else { break };
        let j = (i + 1..d).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    phi.iter().map(|p| p / count).collect()
}

fn random_background(n: usize, d: usize, rng: &mut impl Rng) -> Background {
    let rows = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Background { rows, weights: raw.iter().map(|w| w / total).collect(), description: "random".into() }
}

#[test]
fn exact_mode_matches_enumeration_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for trial in 0..20 {
        let d = 1 + trial % 8;
        let f = random_model(d, &mut rng);
        let bg = random_background(1 + trial % 4, d, &mut rng);
        let x = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
        let exact = shap_exact(&f, x.view(), &bg, 1).unwrap();
        if d <= 6 {
            let brute = permutation_shapley(&f, x.view(), &bg);
            for (a, b) in exact.phi.iter().zip(&brute) {
                assert!((a - b).abs() < 1e-9, "trial {trial}: {a} vs {b}");
            }
        }
        let cfg = ShapConfig { mode: ShapMode::Exact, ..Default::default() };
        let kernel = kernel_shap(&f, x.view(), &bg, 1, &cfg).unwrap();
        assert!(kernel.exact);
        for (a, b) in kernel.phi.iter().zip(&exact.phi) {
            assert!((a - b).abs() < 1e-6, "trial {trial}: {a} vs {b}");
        }
        assert!((kernel.base_value - exact.base_value).abs() < 1e-12);
        assert!(exact.additivity_gap() < 1e-9);
    }
}

#[test]
fn full_budget_switches_to_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let f = random_model(6, &mut rng);
    let bg = random_background(3, 6, &mut rng);
    let x = Array1::from_shape_fn(6, |_| rng.random_range(-2.0..2.0));
    let auto = kernel_shap(&f, x.view(), &bg, 1, &ShapConfig { n_samples: Some(62), ..Default::default() }).unwrap();
    assert!(auto.exact);
    let exact = shap_exact(&f, x.view(), &bg, 1).unwrap();
    for (a, b) in auto.phi.iter().zip(&exact.phi) {
        assert!((a - b).abs() < 1e-6);
    }
    let sampled = kernel_shap(&f, x.view(), &bg, 1, &ShapConfig { n_samples: Some(40), ..Default::default() }).unwrap();
    assert!(!sampled.exact);
    assert!(sampled.additivity_gap() < 1e-9);
    assert!(kernel_shap(&f, x.view(), &bg, 1, &ShapConfig { n_samples: Some(3), ..Default::default() }).is_err());
}

#[test]
fn linear_model_attributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for d in [3, 12, 30] {
        let w = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
        let wc = w.clone();
        let f = move |x: ArrayView2<f64>| Ok(columns((x.dot(&wc) + 0.7).to_vec()));
        let bg = random_background(4, d, &mut rng);
        let x = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
        let e = kernel_shap(&f, x.view(), &bg, 1, &ShapConfig::default()).unwrap();
        let mean = bg.rows.t().dot(&Array1::from(bg.weights.clone()));
        for j in 0..d {
            assert!((e.phi[j] - w[j] * (x[j] - mean[j])).abs() < 1e-6, "d={d} j={j}");
        }
    }
}

#[test]
fn sampled_mode_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..3 {
        let f = random_model(24, &mut rng);
        let bg = random_background(5, 24, &mut rng);
        let x = Array1::from_shape_fn(24, |_| rng.random_range(-2.0..2.0));
        let e = kernel_shap(&f, x.view(), &bg, 1, &ShapConfig::default()).unwrap();
        assert!(!e.exact);
        assert!(e.additivity_gap() < 1e-3, "{}", e.additivity_gap());
    }
}

#[test]
fn dummy_and_symmetry_axioms() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    // feature 2 is ignored; features 0 and 1 enter symmetrically
    let f = |x: ArrayView2<f64>| {
        Ok(columns(x.rows().into_iter().map(|r| (r[0] * r[1]).sin() + r[0] + r[1] + r[3].powi(2)).collect()))
    };
    for _ in 0..10 {
        let v = rng.random_range(-2.0..2.0);
        let x = Array1::from(vec![v, v, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
        let mut rows = Array2::zeros((3, 4));
        for r in 0..3 {
            let b = rng.random_range(-1.0..1.0);
            rows.row_mut(r).assign(&Array1::from(vec![b, b, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]));
        }
        let bg = Background::uniform(rows).unwrap();
        let exact = shap_exact(&f, x.view(), &bg, 1).unwrap();
        assert_eq!(exact.phi[2], 0.0);
        assert!((exact.phi[0] - exact.phi[1]).abs() < 1e-12);
        let kernel = kernel_shap(&f, x.view(), &bg, 1, &ShapConfig { mode: ShapMode::Exact, ..Default::default() }).unwrap();
        assert!(kernel.phi[2].abs() < 1e-9);
        assert!((kernel.phi[0] - kernel.phi[1]).abs() < 1e-9);
    }
}

#[test]
fn three_player_hand_game() {
    // v over coalitions of {1, 2, 3}, read off binary inputs
    let table = |a: bool, b: bool, c: bool| -> f64 {
        match (a, b, c) {
            (false, false, false) => 0.0,
            (true, false, false) => 1.0,
            (false, true, false) => 2.0,
            (false, false, true) => 0.0,
            (true, true, false) => 4.0,
            (true, false, true) => 1.0,
            (false, true, true) => 3.0,
            (true, true, true) => 6.0,
        }
    };
    let f = move |x: ArrayView2<f64>| Ok(columns(x.rows().into_iter().map(|r| table(r[0] > 0.5, r[1] > 0.5, r[2] > 0.5)).collect()));
    let bg = Background::uniform(Array2::zeros((1, 3))).unwrap();
    let x = Array1::from(vec![1.0, 1.0, 1.0]);
    let want = [11.0 / 6.0, 10.0 / 3.0, 5.0 / 6.0];
    let exact = shap_exact(&f, x.view(), &bg, 1).unwrap();
    let kernel = kernel_shap(&f, x.view(), &bg, 1, &ShapConfig::default()).unwrap();
    for j in 0..3 {
        assert!((exact.phi[j] - want[j]).abs() < 1e-12);
        assert!((kernel.phi[j] - want[j]).abs() < 1e-9);
    }
    assert_eq!(exact.base_value, 0.0);
    assert_eq!(exact.fx, 6.0);
}

#[test]
fn constant_model_and_plot_data() {
    let f = |x: ArrayView2<f64>| Ok(columns(vec![2.5; x.nrows()]));
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let bg = random_background(3, 5, &mut rng);
    let x = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
    let e = kernel_shap(&f, x.view(), &bg, 1, &ShapConfig::default()).unwrap();
    assert!(e.phi.iter().all(|p| p.abs() < 1e-12));
    let flat = summary_data(std::slice::from_ref(&e)).unwrap();
    assert!(flat.all_zero);
    assert!(flat.ranking.is_empty());
    assert!(summary_data(&[]).is_err());

    let g = random_model(5, &mut rng);
    let one = kernel_shap(&g, x.view(), &bg, 1, &ShapConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (summary, files) = write_plot_data(std::slice::from_ref(&one), dir.path()).unwrap();
    assert_eq!(summary.explanations, 1);
    assert!(!summary.all_zero);
    assert_eq!(files.len(), 3);
    assert!(files.iter().all(|p| p.is_file()));
    let fd = force_data(&one);
    assert!((fd.reconstructed - fd.fx).abs() < 1e-9);
    assert!(fd.contributions.windows(2).all(|w| w[0].phi.abs() >= w[1].phi.abs()));
}

#[test]
fn summary_ranking_matches_a_direct_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let f = random_model(5, &mut rng);
    let bg = random_background(4, 5, &mut rng);
    let expls: Vec<ShapExplanation> = (0..10)
        .map(|_| {
            let x = Array1::from_shape_fn(5, |_| rng.random_range(-2.0..2.0));
            kernel_shap(&f, x.view(), &bg, 1, &ShapConfig::default()).unwrap()
        })
        .collect();
    let phi = Array2::from_shape_fn((10, 5), |(i, j)| expls[i].phi[j].abs());
    let means = phi.mean_axis(Axis(0)).unwrap();
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap());
    let s = summary_data(&expls).unwrap();
    assert_eq!(s.explanations, 10);
    assert_eq!(s.ranking.iter().map(|r| r.feature).collect::<Vec<_>>(), order);
    for r in &s.ranking {
        assert!((r.mean_abs_phi - means[r.feature]).abs() < 1e-12);
    }
}

#[test]
fn kmeans_background_summarises_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut x = Array2::zeros((90, 2));
    for i in 0..90 {
        let c = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)][i % 3];
        x[[i, 0]] = c.0 + rng.random_range(-0.5..0.5);
        x[[i, 1]] = c.1 + rng.random_range(-0.5..0.5);
    }
    let bg = kmeans_background(x.view(), 3, 0).unwrap();
    assert_eq!(bg.rows.nrows(), 3);
    for w in &bg.weights {
        assert!((w - 1.0 / 3.0).abs() < 1e-12);
    }
    let small = kmeans_background(x.slice(s![..2, ..]), 5, 0).unwrap();
    assert_eq!(small.rows, x.slice(s![..2, ..]));
}
