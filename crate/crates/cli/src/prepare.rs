use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lungxai::datapipe::{
    load_dataset, make_synthetic_dataset, preprocess, save_dataset, split_indices, write_manifest, Dataset, LoadReport,
    SplitSpec,
};
use lungxai::io::{atomic_write, write_json};
use serde::Serialize;

use crate::common::{split_path, CONFIG_FILE};
use crate::config::{resolve, FlagOverrides, RunConfig, OUT_ENV};
use crate::error::{CliError, CliResult};
use crate::rundir::{run_name, Staged};
use crate::Common;

fn load(cfg: &RunConfig) -> CliResult<(Dataset, LoadReport)> {
    let pcfg = cfg.preprocess_config();
    if cfg.data.synthetic {
        let mut ds = make_synthetic_dataset(&cfg.synthetic_spec())?;
        for s in &mut ds.samples {
            s.image = preprocess(s.image.view(), &pcfg)?;
        }
        let report = LoadReport {
            root: "synthetic".into(),
            per_class: ds.classes.iter().cloned().zip(ds.class_counts()).collect(),
            loaded: ds.len(),
            skipped: Vec::new(),
        };
        return Ok((ds, report));
    }
    if cfg.data.root.is_empty() {
        return Err(CliError::Usage("data.root is empty; set it or pass --synthetic".into()));
    }
    let root = Path::new(&cfg.data.root);
    if !root.is_dir() {
        return Err(CliError::Data(format!("data root {} is not a directory", root.display())));
    }
    Ok(load_dataset(root, &pcfg)?)
}

/// Train, validation and test indices into the loaded dataset. Validation
/// is carved from the training portion with its own stratified draw.
fn three_way(ds: &Dataset, cfg: &RunConfig) -> CliResult<[Vec<usize>; 3]> {
    let k = ds.num_classes();
    let outer = split_indices(&ds.labels(), k, &cfg.split_spec())?;
    if cfg.split.val_fraction == 0.0 {
        return Ok([outer.train, Vec::new(), outer.test]);
    }
    let labels: Vec<usize> = outer.train.iter().map(|&i| ds.samples[i].label).collect();
    let inner = split_indices(
        &labels,
        k,
        &SplitSpec {
            train_fraction: 1.0 - cfg.split.val_fraction,
            seed: cfg.seed.wrapping_add(1),
            stratified: cfg.split.stratified,
        },
    )?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| outer.train[i]).collect::<Vec<_>>();
    Ok([pick(&inner.train), pick(&inner.test), outer.test])
}

#[derive(Serialize)]
struct PartSummary {
    count: usize,
    per_class: BTreeMap<String, usize>,
    manifest_hash: String,
}

#[derive(Serialize)]
struct Summary {
    classes: Vec<String>,
    source: String,
    image_size: usize,
    splits: BTreeMap<String, PartSummary>,
}

pub fn run(common: &Common, out: Option<PathBuf>, synthetic: bool) -> CliResult<PathBuf> {
    let flags = FlagOverrides {
        seed: common.seed,
        branch: common.branch,
        synthetic,
        out: out.map(|p| p.display().to_string()),
        ..Default::default()
    };
    let files: Vec<&Path> = common.config.iter().map(PathBuf::as_path).collect();
    let cfg = resolve(&files, &common.set, std::env::var(OUT_ENV).ok(), &flags)?;
    let (ds, report) = load(&cfg)?;
    log::info!("loaded {} images in {} classes", ds.len(), ds.num_classes());
    let parts = three_way(&ds, &cfg)?;

    let stage = Staged::fresh(Path::new(&cfg.out_dir), &run_name(cfg.seed))?;
    let root = stage.path();
    atomic_write(&root.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let data = root.join("data");
    std::fs::create_dir_all(&data).map_err(|e| crate::error::io_err(&data, e))?;
    write_json(&data.join("load_report.json"), &report)?;
    let names = ["train", "val", "test"];
    let named: Vec<(&str, &[usize])> = names.iter().copied().zip(parts.iter().map(Vec::as_slice)).collect();
    write_manifest(&data.join("split.csv"), &ds, &named)?;
    let mut splits = BTreeMap::new();
    for (name, idx) in &named {
        let part = ds.subset(idx);
        save_dataset(&split_path(root, name), &part)?;
        splits.insert(
            name.to_string(),
            PartSummary {
                count: part.len(),
                per_class: part.classes.iter().cloned().zip(part.class_counts()).collect(),
                manifest_hash: part.manifest_hash(),
            },
        );
    }
    write_json(
        &data.join("summary.json"),
        &Summary {
            classes: ds.classes.clone(),
            source: report.root.clone(),
            image_size: cfg.preprocess.size,
            splits,
        },
    )?;
    let target = stage.commit()?;
    log::info!(
        "split {} / {} / {} (train / val / test)",
        parts[0].len(),
        parts[1].len(),
        parts[2].len()
    );
    println!("{}", target.display());
    Ok(target)
}
