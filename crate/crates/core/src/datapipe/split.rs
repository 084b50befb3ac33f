use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        }
    }
}

/// Sorted train and test indices into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `round(n · (1 − f))` with halves rounded away from zero, after snapping
/// away binary representation error (0.2 · 565 is 112.99999999999997).
pub fn test_count(n: usize, train_fraction: f64) -> usize {
    let raw = n as f64 * (1.0 - train_fraction);
    ((raw * 1e9).round() / 1e9).round() as usize
}

pub fn split_indices(labels: &[usize], num_classes: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} must lie in (0, 1)", spec.train_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let groups: Vec<Vec<usize>> = if spec.stratified {
        (0..num_classes)
            .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    for (c, mut members) in groups.into_iter().enumerate() {
        let n = members.len();
        if spec.stratified && n < 2 {
            return Err(invalid!("class {c} has {n} sample(s); stratification needs at least 2"));
        }
        let n_test = test_count(n, spec.train_fraction).clamp(1.min(n), n.saturating_sub(1));
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(&ds.labels(), ds.num_classes(), spec)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.test)))
}
