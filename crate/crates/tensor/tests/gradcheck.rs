use lungxai_tensor::nn::{BatchNorm2d, Conv2d, Conv2dConfig, Module};
use lungxai_tensor::{no_grad, ConvGeom, Tensor, Var};
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
}

/// Compares leaf gradients of `sum(f(inputs) * r)` with central differences.
fn check(shapes: &[&[usize]], seed: u64, tol: f64, f: impl Fn(&[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<Tensor> = shapes.iter().map(|s| randn(s, &mut rng)).collect();
    let leaves: Vec<Var> = values.iter().cloned().map(Var::leaf).collect();
    let out = f(&leaves);
    let r = randn(out.shape(), &mut rng);
    let loss = out.mul(&Var::constant(r.clone())).unwrap().sum();
    let grads = loss.backward().unwrap();

    let eval = |vals: &[Tensor]| -> f64 {
        no_grad(|| {
            let vars: Vec<Var> = vals.iter().cloned().map(Var::constant).collect();
            (f(&vars).value() * &r).sum()
        })
    };
    let h = 1e-6;
    for (i, v) in values.iter().enumerate() {
        let analytic = grads.get_or_zeros(&leaves[i]);
        for k in 0..v.len() {
            let mut plus = values.clone();
            let mut minus = values.clone();
            plus[i].as_slice_mut().unwrap()[k] += h;
            minus[i].as_slice_mut().unwrap()[k] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[k];
            let err = (a - numeric).abs() / (1.0 + numeric.abs().max(a.abs()));
            assert!(err < tol, "input {i} elem {k}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn elementwise_ops() {
    check(&[&[3, 4], &[3, 4]], 1, 1e-7, |v| {
        let s = v[0].add(&v[1]).unwrap().mul(&v[0]).unwrap();
        s.sub(&v[1].sigmoid()).unwrap().scale(1.5)
    });
    check(&[&[2, 5]], 2, 1e-7, |v| v[0].scale(4.0).relu6().add(&v[0].relu()).unwrap());
    check(&[&[2, 3]], 3, 1e-7, |v| {
        let c = Tensor::from_shape_vec(IxDyn(&[3]), vec![0.5, -2.0, 3.0]).unwrap();
        v[0].add_const(&c).unwrap().mul_const(&c).unwrap()
    });
}

#[test]
fn linear_softmax_gather() {
    check(&[&[4, 3], &[5, 3], &[5]], 4, 1e-7, |v| {
        let y = v[0].linear(&v[1], Some(&v[2])).unwrap();
        let p = y.softmax().unwrap();
        p.reshape(&[20]).unwrap().gather(&[0, 6, 13, 19, 6]).unwrap()
    });
}

#[test]
fn conv_variants() {
    for (geom, w) in [
        (ConvGeom { stride: 1, padding: 1, groups: 1 }, [4, 2, 3, 3]),
        (ConvGeom { stride: 2, padding: 1, groups: 1 }, [3, 2, 3, 3]),
        (ConvGeom { stride: 1, padding: 0, groups: 1 }, [3, 2, 1, 1]),
        (ConvGeom { stride: 2, padding: 1, groups: 2 }, [2, 1, 3, 3]),
        (ConvGeom { stride: 1, padding: 3, groups: 1 }, [2, 2, 7, 7]),
    ] {
        check(&[&[2, 2, 5, 6], &w, &[w[0]]], 5, 1e-6, |v| {
            v[0].conv2d(&v[1], Some(&v[2]), geom).unwrap()
        });
    }
}

#[test]
fn pooling_and_upsampling() {
    check(&[&[1, 2, 6, 6]], 6, 1e-7, |v| v[0].avg_pool2d(2, 2).unwrap());
    check(&[&[1, 2, 7, 7]], 7, 1e-7, |v| v[0].max_pool2d(3, 2, 1).unwrap());
    check(&[&[1, 2, 7, 7]], 8, 1e-7, |v| v[0].max_pool2d(1, 2, 0).unwrap());
    check(&[&[2, 3, 4, 4]], 9, 1e-7, |v| v[0].upsample2x_to(7, 8).unwrap());
    check(&[&[2, 3, 4, 5]], 10, 1e-7, |v| v[0].global_avg_pool().unwrap());
}

#[test]
fn concat_and_channel_scale() {
    check(&[&[2, 2, 3, 3], &[2, 3, 3, 3], &[2, 5]], 11, 1e-7, |v| {
        let c = Var::concat_channels(&[v[0].clone(), v[1].clone()]).unwrap();
        c.channel_scale(&v[2].sigmoid()).unwrap()
    });
}

#[test]
fn batch_norm_train_and_eval() {
    check(&[&[3, 2, 3, 3], &[2], &[2]], 12, 1e-6, |v| {
        v[0].batch_norm(&v[1], &v[2], None, 1e-5).unwrap().0
    });
    let rm = Tensor::from_shape_vec(IxDyn(&[2]), vec![0.1, -0.3]).unwrap();
    let rv = Tensor::from_shape_vec(IxDyn(&[2]), vec![0.5, 2.0]).unwrap();
    check(&[&[3, 2, 3, 3], &[2], &[2]], 13, 1e-7, |v| {
        v[0].batch_norm(&v[1], &v[2], Some((&rm, &rv)), 1e-5).unwrap().0
    });
}

#[test]
fn frozen_layers_record_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut conv = Conv2d::new(2, 3, 3, Conv2dConfig { padding: 1, ..Default::default() }, &mut rng);
    lungxai_tensor::nn::set_trainable(&mut conv, false);
    let x = Var::constant(randn(&[1, 2, 4, 4], &mut rng));
    let y = conv.forward(&x).unwrap();
    assert!(!y.requires_grad());
    let leaf = x.detach_leaf();
    let y = conv.forward(&leaf).unwrap().sum();
    let g = y.backward().unwrap();
    assert!(g.get(&leaf).is_some());
    assert!(g.get(conv.weight.var()).is_none());
}

#[test]
fn batch_norm_running_stats_follow_batches() {
    let bn = BatchNorm2d::new(1);
    let x = Var::constant(Tensor::from_shape_vec(IxDyn(&[1, 1, 1, 4]), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = bn.forward(&x, true).unwrap();
    // Normalised with the biased variance 1.25.
    let expected = (1.0 - 2.5) / (1.25f64 + 1e-5).sqrt();
    assert!((y.value()[[0, 0, 0, 0]] - expected).abs() < 1e-12);
    // Running mean 0.9·0 + 0.1·2.5, running variance 0.9·1 + 0.1·(5/3).
    assert!((bn.running_mean()[[0]] - 0.25).abs() < 1e-12);
    assert!((bn.running_var()[[0]] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    let mut names = Vec::new();
    bn.visit("bn", &mut |n, _| names.push(n.to_string()));
    assert_eq!(names, ["bn.weight", "bn.bias", "bn.running_mean", "bn.running_var"]);
}
