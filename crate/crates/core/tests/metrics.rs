use lungxai::metrics::*;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn classes() -> Vec<String> {
    ["Benign", "Malignant", "Normal"].map(String::from).to_vec()
}

fn reconciled() -> ConfusionMatrix {
    ConfusionMatrix::from_counts(classes(), vec![vec![21, 0, 3], vec![0, 113, 0], vec![1, 1, 81]]).unwrap()
}

#[test]
fn published_report_is_reproduced() {
    let rep = classification_report(&reconciled()).unwrap();
    let want = [("0.95", "0.88", "0.91", 24), ("0.99", "1.00", "1.00", 113), ("0.96", "0.98", "0.97", 83)];
    for (m, (p, r, f, s)) in rep.per_class.iter().zip(want) {
        assert_eq!((fmt2(m.precision).as_str(), fmt2(m.recall).as_str(), fmt2(m.f1).as_str(), m.support), (p, r, f, s), "{}", m.name);
    }
    assert_eq!(fmt2(rep.accuracy), "0.98");
    assert_eq!(rep.total, 220);
    // full precision is kept
    assert_eq!(rep.per_class[0].recall, 21.0 / 24.0);

    let md = EvalReport::from_confusion("svm", "hash", reconciled()).unwrap().to_markdown();
    assert!(md.contains("| Benign | 0.95 | 0.88 | 0.91 | 24 |"), "{md}");
    assert!(md.contains("| Accuracy | | | 0.98 | 220 |"));
}

#[test]
fn small_hand_matrices() {
    let perfect = ConfusionMatrix::from_counts(classes(), vec![vec![24, 0, 0], vec![0, 113, 0], vec![0, 0, 83]]).unwrap();
    let rep = classification_report(&perfect).unwrap();
    assert!(rep.per_class.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
    assert_eq!(rep.accuracy, 1.0);

    let even = ConfusionMatrix::from_counts(classes()[..2].to_vec(), vec![vec![1, 1], vec![1, 1]]).unwrap();
    let rep = classification_report(&even).unwrap();
    assert!(rep.per_class.iter().all(|m| m.precision == 0.5 && m.recall == 0.5 && m.f1 == 0.5));
    assert_eq!(rep.accuracy, 0.5);

    assert!(classification_report(&ConfusionMatrix::zeros(classes())).is_err());

    let never = ConfusionMatrix::from_counts(classes(), vec![vec![2, 0, 0], vec![1, 0, 0], vec![0, 0, 3]]).unwrap();
    let r = EvalReport::from_confusion("m", "d", never).unwrap();
    assert!(r.per_class[1].precision_undefined);
    assert_eq!(r.per_class[1].precision, 0.0);
    assert!(r.notes.iter().any(|n| n.contains("Malignant")));
}

#[test]
fn confusion_matrix_counts() {
    let y = [0, 1, 2, 2, 1, 0, 0];
    let cm = confusion_matrix(&y, &y, &classes()).unwrap();
    assert_eq!(cm.counts, vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    let cm = confusion_matrix(&[], &[], &classes()).unwrap();
    assert_eq!(cm.counts, vec![vec![0; 3]; 3]);
    assert!(confusion_matrix(&[0, 3], &[0, 1], &classes()).is_err());
    assert!(confusion_matrix(&[0], &[0, 1], &classes()).is_err());

    // rebuilt from per-sample predictions matching the published figure
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    for (t, row) in reconciled().counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                y_true.push(t);
                y_pred.push(p);
            }
        }
    }
    assert_eq!(confusion_matrix(&y_true, &y_pred, &classes()).unwrap(), reconciled());
}

fn pairwise_auc(y: &[usize], s: &[f64], class: usize) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == class && y[j] != class {
                pairs += 1;
                twice += if s[i] > s[j] { 2 } else if s[i] == s[j] { 1 } else { 0 };
            }
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

#[test]
fn threshold_sweep_equals_pairwise_concordance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let k = rng.random_range(2..=4);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        // a coarse grid forces ties
        let levels = rng.random_range(2..12);
        let scores = Array2::from_shape_fn((n, k), |_| rng.random_range(0..levels) as f64 / levels as f64);
        for c in 0..k {
            let curve = roc_auc_ovr(&y, scores.view(), c).unwrap();
            let col: Vec<f64> = scores.column(c).to_vec();
            assert_eq!(curve.auc, pairwise_auc(&y, &col, c));
            assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
            if curve.auc.is_some() {
                assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
            }
        }
    }
}

#[test]
fn auc_examples() {
    let y = [0, 0, 1, 1];
    let sep = Array2::from_shape_vec((4, 2), vec![0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9]).unwrap();
    assert_eq!(roc_auc_ovr(&y, sep.view(), 0).unwrap().auc, Some(1.0));
    let flat = Array2::from_elem((4, 2), 0.5);
    assert_eq!(roc_auc_ovr(&y, flat.view(), 1).unwrap().auc, Some(0.5));
    // positives 0.9, 0.6; negatives 0.7, 0.1
    let s = Array2::from_shape_vec((4, 1), vec![0.9, 0.6, 0.7, 0.1]).unwrap();
    assert_eq!(roc_auc_ovr(&[0, 0, 1, 1], s.view(), 0).unwrap().auc, Some(0.75));

    let one_class = roc_auc_ovr(&[1, 1], sep.slice(ndarray::s![..2, ..]), 0).unwrap();
    assert_eq!(one_class.auc, None);
    assert!(roc_auc_ovr(&y, sep.view(), 2).is_err());
    let bad = Array2::from_elem((4, 2), f64::NAN);
    assert!(roc_auc_ovr(&y, bad.view(), 0).is_err());
}

#[test]
fn undefined_auc_is_null_in_json() {
    let y = [0, 0, 1, 1];
    let scores = Array2::from_shape_vec((4, 3), vec![0.8, 0.1, 0.1, 0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.1, 0.6, 0.3]).unwrap();
    let r = EvalReport::from_scores("m", "d", &classes(), &y, scores.view(), "probability").unwrap();
    assert_eq!(r.auc[2], None);
    assert!(r.notes.iter().any(|n| n.contains("AUC undefined for Normal")));
    let json: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert!(json["auc"][2].is_null());
    assert_eq!(json["auc"][0], 1.0);
    assert!(r.to_markdown().contains("| Normal | undefined |"));
}

#[test]
fn accuracy_is_support_weighted_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let k = rng.random_range(2..6);
        let counts: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..30)).collect()).collect();
        let Ok(cm) = ConfusionMatrix::from_counts((0..k).map(|c| c.to_string()).collect(), counts) else { continue };
        let Ok(rep) = classification_report(&cm) else { continue };
        let weighted: f64 = rep.per_class.iter().map(|m| m.recall * m.support as f64).sum::<f64>() / rep.total as f64;
        assert!((weighted - rep.accuracy).abs() < 1e-12);
    }
}

#[test]
fn relabelling_permutes_the_report() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = reconciled();
    let rep = classification_report(&base).unwrap();
    for _ in 0..6 {
        let mut perm = vec![0, 1, 2];
        perm.shuffle(&mut rng);
        let moved = base.permuted(&perm);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(moved.counts[i][j], base.counts[perm[i]][perm[j]]);
            }
        }
        let prep = classification_report(&moved).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(prep.per_class[i], rep.per_class[p]);
        }
        assert_eq!(prep.accuracy, rep.accuracy);
    }
}

#[test]
fn report_files_are_stable() {
    let y = [0, 1, 2, 0, 1, 2, 0, 1];
    let scores = Array2::from_shape_fn((8, 3), |(i, c)| if y[i] == c { 0.6 } else { 0.2 } + i as f64 * 1e-3);
    let r = EvalReport::from_scores("model", "data", &classes(), &y, scores.view(), "probability").unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = emit_report(&r, a.path()).unwrap();
    emit_report(&r, b.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["metrics.json", "confusion.csv", "roc_class_0.png", "roc_class_1.png", "roc_class_2.png", "report.md"]);
    for f in &names {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let back: EvalReport = serde_json::from_slice(&std::fs::read(a.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(back, r);
    let csv = std::fs::read_to_string(a.path().join("confusion.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "true\\predicted,Benign,Malignant,Normal");
}

#[test]
fn argmax_ties_go_low() {
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    assert_eq!(argmax(&[1.0, 1.0]), 0);
}
