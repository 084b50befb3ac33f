use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::image::{decoded_to_tensor, preprocess, ImageTensor, PreprocessConfig};
use crate::error::{invalid, Error, Result};
use crate::io::sha256_hex;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub label: usize,
    pub source_path: String,
    pub class_name: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn images(&self) -> Vec<&ImageTensor> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    /// Hash of class list, paths and labels, identifying a sample manifest.
    pub fn manifest_hash(&self) -> String {
        let mut text = self.classes.join("\n");
        for s in &self.samples {
            text.push_str(&format!("\n{}\t{}", s.source_path, s.label));
        }
        sha256_hex(text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub root: String,
    pub per_class: BTreeMap<String, usize>,
    pub loaded: usize,
    pub skipped: Vec<SkippedFile>,
}

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Reads `<root>/<class>/*.{png,jpg,jpeg,bmp}`. Classes are indexed in
/// lexicographic folder order; undecodable files are skipped and reported.
pub fn load_dataset(root: &Path, cfg: &PreprocessConfig) -> Result<(Dataset, LoadReport)> {
    cfg.validate()?;
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
    }
    let read = |p: &Path| std::fs::read_dir(p).map_err(|e| Error::io(p, e));
    let mut class_dirs: Vec<_> = read(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("no class folders under {}", root.display())));
    }
    let mut ds = Dataset::default();
    let mut report = LoadReport {
        root: root.display().to_string(),
        ..Default::default()
    };
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut files: Vec<_> = read(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && has_image_extension(p))
            .collect();
        files.sort();
        let mut count = 0;
        for f in files {
            match load_image(&f, cfg).map_err(|e| e.to_string()) {
                Ok(image) => {
                    ds.samples.push(Sample {
                        image,
                        label,
                        source_path: f.display().to_string(),
                        class_name: name.clone(),
                    });
                    count += 1;
                }
                Err(reason) => {
                    log::warn!("skipping {}: {reason}", f.display());
                    report.skipped.push(SkippedFile {
                        path: f.display().to_string(),
                        reason,
                    });
                }
            }
        }
        if count == 0 {
            return Err(Error::Data(format!("class folder {} has no decodable images", dir.display())));
        }
        report.per_class.insert(name.clone(), count);
        ds.classes.push(name);
    }
    report.loaded = ds.len();
    Ok((ds, report))
}

/// Decodes and preprocesses one image file.
pub fn load_image(path: &Path, cfg: &PreprocessConfig) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    preprocess(decoded_to_tensor(&img)?.view(), cfg)
}

/// Row-per-label indicator matrix with `k` columns.
pub fn one_hot(y: &[usize], k: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((y.len(), k));
    for (i, &label) in y.iter().enumerate() {
        if label >= k {
            return Err(invalid!("label {label} out of range for {k} classes"));
        }
        out[[i, label]] = 1.0;
    }
    Ok(out)
}
