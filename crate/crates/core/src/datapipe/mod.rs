//! Dataset ingestion, preprocessing, stratified splitting, SMOTE balancing
//! and synthetic data generation.

mod dataset;
mod image;
mod smote;
mod split;
mod synthetic;

use std::path::Path;

use ndarray::{Array2, Array3};

pub use self::image::{decoded_to_tensor, preprocess, resize_bilinear, resize_plane, ImageTensor, PreprocessConfig};
pub use dataset::{load_dataset, load_image, one_hot, Dataset, LoadReport, Sample, SkippedFile};
pub use smote::{smote_balance, SmoteConfig};
pub use split::{split_indices, stratified_split, test_count, SplitIndices, SplitSpec};
pub use synthetic::{make_synthetic_dataset, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{atomic_write, ArrayData, Container, NamedArray};

/// Applies SMOTE to a dataset's flattened images and reshapes the result.
/// Synthetic samples get a `smote://` source path.
pub fn smote_dataset(ds: &Dataset, cfg: &SmoteConfig) -> Result<Dataset> {
    let Some(first) = ds.samples.first() else {
        return Err(invalid!("SMOTE on an empty dataset"));
    };
    let dims = first.image.dim();
    let width = dims.0 * dims.1 * dims.2;
    let mut flat = Array2::<f32>::zeros((ds.len(), width));
    for (mut row, s) in flat.rows_mut().into_iter().zip(&ds.samples) {
        if s.image.dim() != dims {
            return Err(invalid!("mixed image shapes {:?} and {:?}", dims, s.image.dim()));
        }
        row.assign(&ndarray::ArrayView1::from(s.image.as_standard_layout().as_slice().expect("contiguous")));
    }
    let (xb, yb) = smote_balance(flat.view(), &ds.labels(), cfg)?;
    let mut out = ds.clone();
    for (i, &label) in yb.iter().enumerate().skip(ds.len()) {
        let image = Array3::from_shape_vec(dims, xb.row(i).to_vec()).expect("row reshapes");
        out.samples.push(Sample {
            image,
            label,
            source_path: format!("smote://{}/{:05}", ds.classes[label], i - ds.len()),
            class_name: ds.classes[label].clone(),
        });
    }
    Ok(out)
}

/// `path,label,split` rows for every sample of both splits.
pub fn write_split_manifest(path: &Path, ds: &Dataset, split: &SplitIndices) -> Result<()> {
    write_manifest(path, ds, &[("train", &split.train), ("test", &split.test)])
}

/// `path,label,split` rows for every sample in the named parts, in sample
/// order.
pub fn write_manifest(path: &Path, ds: &Dataset, parts: &[(&str, &[usize])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| invalid!("csv: {e}");
    w.write_record(["path", "label", "split"]).map_err(csv_err)?;
    let mut rows: Vec<(usize, &str)> = Vec::new();
    for (name, idx) in parts {
        rows.extend(idx.iter().map(|&i| (i, *name)));
    }
    rows.sort_unstable();
    for (i, name) in rows {
        let s = ds.samples.get(i).ok_or_else(|| invalid!("sample index {i} out of range"))?;
        w.write_record([s.source_path.as_str(), &s.label.to_string(), name]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| invalid!("csv: {e}"))?;
    atomic_write(path, &bytes)
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    classes: Vec<String>,
    labels: Vec<usize>,
    paths: Vec<String>,
    manifest_hash: String,
}

pub const DATASET_KIND: &str = "dataset";

/// Stores preprocessed images with their labels and source paths.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let dims = ds.samples.first().map(|s| s.image.dim()).unwrap_or((0, 0, 0));
    let mut data = Vec::with_capacity(ds.len() * dims.0 * dims.1 * dims.2);
    for s in &ds.samples {
        if s.image.dim() != dims {
            return Err(invalid!("mixed image shapes {:?} and {:?}", dims, s.image.dim()));
        }
        data.extend(s.image.iter().copied());
    }
    let mut c = Container::new(
        DATASET_KIND,
        DatasetMeta {
            classes: ds.classes.clone(),
            labels: ds.labels(),
            paths: ds.samples.iter().map(|s| s.source_path.clone()).collect(),
            manifest_hash: ds.manifest_hash(),
        },
    );
    c.push(NamedArray::f32("images", &[ds.len(), dims.0, dims.1, dims.2], data));
    c.save(path)
}

pub fn load_dataset_file(path: &Path) -> Result<Dataset> {
    let c: Container<DatasetMeta> = Container::load(path, DATASET_KIND)?;
    let bad = |d: String| Error::format(path, d);
    let (shape, data) = match c.array("images") {
        Some(NamedArray { shape, data: ArrayData::F32(v), .. }) if shape.len() == 4 => (shape, v),
        _ => return Err(bad("missing f32 array images".into())),
    };
    let n = shape[0];
    let m = &c.meta;
    if m.labels.len() != n || m.paths.len() != n || m.labels.iter().any(|&y| y >= m.classes.len()) {
        return Err(bad("labels, paths and images disagree".into()));
    }
    let per = shape[1] * shape[2] * shape[3];
    let samples = (0..n)
        .map(|i| Sample {
            image: Array3::from_shape_vec((shape[1], shape[2], shape[3]), data[i * per..(i + 1) * per].to_vec())
                .expect("length checked by container"),
            label: m.labels[i],
            source_path: m.paths[i].clone(),
            class_name: m.classes[m.labels[i]].clone(),
        })
        .collect();
    let ds = Dataset { classes: m.classes.clone(), samples };
    if ds.manifest_hash() != m.manifest_hash {
        return Err(bad("manifest hash mismatch".into()));
    }
    Ok(ds)
}
