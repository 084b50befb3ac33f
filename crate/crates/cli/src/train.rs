use std::path::Path;

use lungxai::datapipe::{smote_balance, smote_dataset, Dataset};
use lungxai::dense::{build_model, save_artifact, train, Labeled};
use lungxai::io::{atomic_write, write_json};
use lungxai::metrics::argmax;
use lungxai::svm::{
    extract_features, fit_scaler, hyperparam_search, save_features, Extractor, FeatureMatrix, Kernel, KernelSpec,
    SvmPipeline,
};
use serde::Serialize;

use crate::common::{load_split, open_run, refs, sized, Run, CONFIG_FILE, SVM_MODEL_FILE, SVM_TRAIN_FEATURES};
use crate::config::{weights_path, Branch, FlagOverrides};
use crate::error::CliResult;
use crate::rundir::Staged;
use crate::Common;

pub fn run(common: &Common, root: &Path) -> CliResult<()> {
    let run = open_run(root, common, FlagOverrides::default())?;
    let branches = run.cfg.branch.expand();
    let models = run.root.join("models");
    // claim every target before spending any compute
    let stages = branches
        .iter()
        .map(|b| Staged::exact(&models, b.name()))
        .collect::<CliResult<Vec<_>>>()?;
    let train_ds = load_split(&run.root, "train")?;
    let val_ds = load_split(&run.root, "val")?;
    for (b, stage) in branches.iter().zip(stages) {
        atomic_write(&stage.path().join(CONFIG_FILE), run.cfg.to_toml().as_bytes())?;
        match b {
            Branch::Dense => train_dense(&run, &train_ds, &val_ds, stage.path())?,
            Branch::Svm => train_svm(&run, &train_ds, &val_ds, stage.path())?,
            Branch::Both => unreachable!("expanded"),
        }
        let dir = stage.commit()?;
        println!("{} model -> {}", b.name(), dir.display());
    }
    Ok(())
}

fn train_dense(run: &Run, train_ds: &Dataset, val_ds: &Dataset, out: &Path) -> CliResult<()> {
    let cfg = &run.cfg;
    let data = if cfg.dense.smote {
        smote_dataset(train_ds, &cfg.smote_config())?
    } else {
        train_ds.clone()
    };
    log::info!("dense branch: {} training images ({} after balancing)", train_ds.len(), data.len());
    let mut model = build_model(&cfg.dense_model_config(train_ds.num_classes()))?;
    if let Some(w) = weights_path(&cfg.dense.weights) {
        model.load_backbone_weights(w)?;
    } else {
        log::warn!("dense backbone uses random weights (dense.weights not set)");
    }
    let loss = cfg.focal_config(&data.class_counts());
    let (images, labels) = (data.images(), data.labels());
    let (val_images, val_labels) = (val_ds.images(), val_ds.labels());
    let history = train(
        &mut model,
        Labeled {
            images: &images,
            labels: &labels,
        },
        Labeled {
            images: &val_images,
            labels: &val_labels,
        },
        &loss,
        &cfg.dense_train_config(),
    )?;
    save_artifact(out, &model, &train_ds.classes, &history)?;
    if let Some(last) = history.epochs.last() {
        log::info!(
            "dense branch: final train accuracy {:.4}, kept epoch {:?}",
            last.train_accuracy,
            history.best_epoch
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SvmSummary {
    kernel: Kernel,
    c: f64,
    cv_accuracy: f64,
    folds: usize,
    train_rows: usize,
    balanced_rows: usize,
    val_accuracy: Option<f64>,
}

fn train_svm(run: &Run, train_ds: &Dataset, val_ds: &Dataset, out: &Path) -> CliResult<()> {
    let cfg = &run.cfg;
    let ex = Extractor::new(cfg.extractor_config(), weights_path(&cfg.svm.weights))?;
    let resized = sized(&train_ds.images(), cfg.svm.input_size);
    let feats = extract_features(&refs(&resized), &ex)?;
    let labels = train_ds.labels();
    save_features(&out.join(SVM_TRAIN_FEATURES), &feats, &labels)?;
    let (x, y) = if cfg.svm.smote {
        smote_balance(feats.data.view(), &labels, &cfg.smote_config())?
    } else {
        (feats.data.clone(), labels.clone())
    };
    log::info!("svm branch: {} x {} features ({} rows after balancing)", feats.data.nrows(), feats.data.ncols(), x.nrows());
    let z = fit_scaler(x.view())?.apply(x.view())?;
    let search = hyperparam_search(z.view(), &y, &train_ds.classes, &cfg.svm_grid()?, cfg.svm.folds, cfg.seed)?;
    let spec = match search.best.kernel {
        Kernel::Linear => KernelSpec::Linear,
        Kernel::Rbf { gamma } => KernelSpec::Rbf { gamma: Some(gamma) },
    };
    let balanced = FeatureMatrix {
        data: x,
        fingerprint: feats.fingerprint.clone(),
    };
    let mut pipeline = SvmPipeline::fit(cfg.extractor_config(), &balanced, &y, &train_ds.classes, spec, search.best.c)?;
    pipeline.cv_table = search.table.clone();
    pipeline.save(&out.join(SVM_MODEL_FILE))?;
    write_json(&out.join("cv.json"), &search)?;

    let val_accuracy = if val_ds.is_empty() {
        None
    } else {
        let resized = sized(&val_ds.images(), cfg.svm.input_size);
        let vf = extract_features(&refs(&resized), &ex)?;
        let dec = pipeline.decision(&vf)?;
        let hits = dec
            .rows()
            .into_iter()
            .zip(val_ds.labels())
            .filter(|(r, y)| argmax(&r.to_vec()) == *y)
            .count();
        Some(hits as f64 / val_ds.len() as f64)
    };
    write_json(
        &out.join("summary.json"),
        &SvmSummary {
            kernel: search.best.kernel,
            c: search.best.c,
            cv_accuracy: search.best.mean_accuracy,
            folds: search.folds,
            train_rows: feats.data.nrows(),
            balanced_rows: balanced.data.nrows(),
            val_accuracy,
        },
    )?;
    log::info!(
        "svm branch: {} kernel, C = {}, CV accuracy {:.4}, validation accuracy {:?}",
        spec.name(),
        search.best.c,
        search.best.mean_accuracy,
        val_accuracy
    );
    Ok(())
}
