use std::path::{Path, PathBuf};

use lungxai::datapipe::{load_image, ImageTensor};
use lungxai::explain::{
    grad_cam, kernel_shap, kmeans_background, overlay, save_png, write_plot_data, Heatmap, ShapConfig, ShapExplanation,
    ShapMode, SvmCam, SVM_CAM_LAYER,
};
use lungxai::io::write_json;
use lungxai::metrics::argmax;
use lungxai::svm::{extract_features, load_features};
use ndarray::ArrayView2;
use serde::Serialize;

use crate::common::{
    check_classes, load_model, load_split, open_run, refs, single_branch_for_model, sized, Loaded, Run, SvmBundle,
    SVM_TRAIN_FEATURES,
};
use crate::config::{Branch, FlagOverrides, Method};
use crate::error::{CliError, CliResult};
use crate::rundir::Staged;
use crate::Common;

pub struct Request {
    pub method: Option<Method>,
    pub index: Option<usize>,
    pub image: Option<PathBuf>,
    pub count: Option<usize>,
    pub split: Option<String>,
    pub model: Option<PathBuf>,
}

struct Target {
    index: Option<usize>,
    source: String,
    label: Option<usize>,
    image: ImageTensor,
}

fn targets(run: &Run, req: &Request) -> CliResult<(Vec<Target>, Option<Vec<String>>)> {
    if let Some(p) = &req.image {
        let image = load_image(p, &run.cfg.preprocess_config())?;
        return Ok((
            vec![Target {
                index: None,
                source: p.display().to_string(),
                label: None,
                image,
            }],
            None,
        ));
    }
    let ex = &run.cfg.explain;
    let ds = load_split(&run.root, &ex.split)?;
    let start = req.index.unwrap_or(0);
    if start >= ds.len() {
        return Err(CliError::Usage(format!("--index {start} is out of range for the {} split of {} samples", ex.split, ds.len())));
    }
    let end = (start + ex.count).min(ds.len());
    let picked = (start..end)
        .map(|i| {
            let s = &ds.samples[i];
            Target {
                index: Some(i),
                source: s.source_path.clone(),
                label: Some(s.label),
                image: s.image.clone(),
            }
        })
        .collect();
    Ok((picked, Some(ds.classes)))
}

pub fn run(common: &Common, root: &Path, req: Request) -> CliResult<()> {
    let flags = FlagOverrides {
        method: req.method,
        count: req.count,
        split: req.split.clone(),
        ..Default::default()
    };
    let run = open_run(root, common, flags)?;
    let method = run.cfg.explain.method;
    let branches = match (method, run.cfg.branch) {
        (Method::Shap, Branch::Dense) => {
            return Err(CliError::Usage(
                "SHAP explains the SVM branch's deep-feature space; use --branch svm (or Grad-CAM for the dense branch)".into(),
            ))
        }
        (Method::Shap, _) => vec![Branch::Svm],
        (Method::Gradcam, b) => b.expand(),
    };
    single_branch_for_model(&branches, req.model.as_deref())?;
    let loaded = branches
        .iter()
        .map(|&b| load_model(&run, b, req.model.as_deref()))
        .collect::<CliResult<Vec<Loaded>>>()?;
    for m in &loaded {
        if let (Method::Gradcam, Loaded::Svm(s)) = (method, m) {
            SvmCam::new(&s.extractor, &s.pipeline)?;
        }
    }
    let (targets, data_classes) = targets(&run, &req)?;
    for m in &loaded {
        if let Some(c) = &data_classes {
            check_classes(m.classes(), c)?;
        }
    }
    for m in &loaded {
        let base = format!("{}-{}", m.branch().name(), if method == Method::Shap { "shap" } else { "gradcam" });
        let stage = Staged::fresh(&run.root.join("explain"), &base)?;
        match (method, m) {
            (Method::Gradcam, _) => gradcam(&run, m, &targets, stage.path())?,
            (Method::Shap, Loaded::Svm(s)) => shap(&run, s, &targets, stage.path())?,
            (Method::Shap, Loaded::Dense(_)) => unreachable!("rejected above"),
        }
        let dir = stage.commit()?;
        println!("{} -> {}", base, dir.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct CamItem {
    index: Option<usize>,
    source: String,
    label: Option<usize>,
    predicted: usize,
    predicted_class: String,
    layer: String,
    all_zero: bool,
    grid: String,
    overlay: String,
}

#[derive(Serialize)]
struct CamFile {
    branch: String,
    opacity: f64,
    items: Vec<CamItem>,
}

fn gradcam(run: &Run, m: &Loaded, targets: &[Target], out: &Path) -> CliResult<()> {
    let opacity = run.cfg.explain.opacity;
    let mut items = Vec::new();
    for (k, t) in targets.iter().enumerate() {
        let (predicted, heat): (usize, Heatmap) = match m {
            Loaded::Dense(a) => {
                let p = a.model.predict(&[&t.image])?;
                let c = argmax(&p.row(0).to_vec());
                (c, grad_cam(&a.model, &t.image, c, &run.cfg.explain.layer)?)
            }
            Loaded::Svm(s) => {
                let img = sized(&[&t.image], s.extractor.config.input_size);
                let cam = SvmCam::new(&s.extractor, &s.pipeline)?;
                let f = extract_features(&refs(&img), &s.extractor)?;
                let c = argmax(&s.pipeline.decision(&f)?.row(0).to_vec());
                (c, grad_cam(&cam, &img[0], c, SVM_CAM_LAYER)?)
            }
        };
        let grid = format!("cam_{k}.bin");
        let png = format!("cam_{k}.png");
        heat.save_grid(&out.join(&grid))?;
        save_png(&overlay(&heat, &t.image, opacity)?, &out.join(&png))?;
        println!(
            "{} gradcam {}: class {} ({}){}",
            m.branch().name(),
            t.index.map_or_else(|| t.source.clone(), |i| format!("sample {i}")),
            predicted,
            m.classes()[predicted],
            if heat.all_zero { ", all-zero map" } else { "" }
        );
        items.push(CamItem {
            index: t.index,
            source: t.source.clone(),
            label: t.label,
            predicted,
            predicted_class: m.classes()[predicted].clone(),
            layer: heat.layer.clone(),
            all_zero: heat.all_zero,
            grid,
            overlay: png,
        });
    }
    write_json(
        &out.join("gradcam.json"),
        &CamFile {
            branch: m.branch().name().into(),
            opacity,
            items,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ShapItem {
    index: Option<usize>,
    source: String,
    label: Option<usize>,
    predicted: usize,
    predicted_class: String,
    additivity_gap: f64,
}

#[derive(Serialize)]
struct ShapIndex {
    background_k: usize,
    background_rows: usize,
    dims: usize,
    all_zero: bool,
    items: Vec<ShapItem>,
}

fn shap(run: &Run, s: &SvmBundle, targets: &[Target], out: &Path) -> CliResult<()> {
    let feats_path = s.dir.join(SVM_TRAIN_FEATURES);
    if !feats_path.is_file() {
        return Err(CliError::Data(format!("missing training features {}", feats_path.display())));
    }
    let (train_f, _) = load_features(&feats_path)?;
    let z_train = s.pipeline.scale(&train_f)?;
    let k = run.cfg.explain.background_k;
    let bg = kmeans_background(z_train.view(), k, run.cfg.seed)?;
    let f = |z: ArrayView2<f64>| s.pipeline.model.decision(z);
    let cfg = ShapConfig {
        n_samples: run.cfg.explain.shap_samples,
        mode: ShapMode::Auto,
        seed: run.cfg.seed,
    };
    let mut expls: Vec<ShapExplanation> = Vec::new();
    let mut items = Vec::new();
    for t in targets {
        let img = sized(&[&t.image], s.extractor.config.input_size);
        let z = s.pipeline.scale(&extract_features(&refs(&img), &s.extractor)?)?;
        let predicted = argmax(&s.pipeline.model.decision(z.view())?.row(0).to_vec());
        let e = kernel_shap(&f, z.row(0), &bg, predicted, &cfg)?;
        let top = e
            .phi
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, v)| (i, *v));
        println!(
            "svm shap {}: class {} ({}), f(x) {:.4} = base {:.4} + sum(phi), strongest feature {:?}",
            t.index.map_or_else(|| t.source.clone(), |i| format!("sample {i}")),
            predicted,
            s.pipeline.classes()[predicted],
            e.fx,
            e.base_value,
            top
        );
        items.push(ShapItem {
            index: t.index,
            source: t.source.clone(),
            label: t.label,
            predicted,
            predicted_class: s.pipeline.classes()[predicted].clone(),
            additivity_gap: e.additivity_gap(),
        });
        expls.push(e);
    }
    let (summary, _) = write_plot_data(&expls, out)?;
    if summary.all_zero {
        println!("svm shap: every attribution is zero");
    }
    write_json(
        &out.join("samples.json"),
        &ShapIndex {
            background_k: k,
            background_rows: bg.rows.nrows(),
            dims: z_train.ncols(),
            all_zero: summary.all_zero,
            items,
        },
    )?;
    Ok(())
}
