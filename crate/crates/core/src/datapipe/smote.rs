use ndarray::{Array2, ArrayView2, Axis};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_neighbors: 5, seed: 42 }
    }
}

fn sq_dist<T: Float>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum()
}

/// Oversamples every class up to the majority count. The original rows
/// come first and unchanged; each synthetic row is `a + t·(b − a)` for a
/// random class member `a`, one of its `k` nearest same-class neighbours
/// `b` and `t ∈ [0, 1)`.
pub fn smote_balance<T: Float>(x: ArrayView2<T>, y: &[usize], cfg: &SmoteConfig) -> Result<(Array2<T>, Vec<usize>)> {
    if x.nrows() != y.len() {
        return Err(invalid!("{} rows but {} labels", x.nrows(), y.len()));
    }
    if cfg.k_neighbors == 0 {
        return Err(invalid!("k_neighbors must be at least 1"));
    }
    let k_classes = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k_classes];
    for (i, &c) in y.iter().enumerate() {
        members[c].push(i);
    }
    let present = members.iter().filter(|m| !m.is_empty()).count();
    if present < 2 {
        log::warn!("SMOTE on single-class input is a no-op");
        return Ok((x.to_owned(), y.to_vec()));
    }
    let majority = members.iter().map(Vec::len).max().unwrap_or(0);
    for (c, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < majority && cfg.k_neighbors >= m.len() {
            return Err(invalid!(
                "k_neighbors {} must be smaller than class {c} size {}",
                cfg.k_neighbors,
                m.len()
            ));
        }
    }
    let x = x.as_standard_layout();
    let row = |i: usize| x.row(i).to_slice().expect("standard layout");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut synth: Vec<T> = Vec::new();
    let mut y_out = y.to_vec();
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() || m.len() == majority {
            continue;
        }
        let mut neighbours: Vec<Option<Vec<usize>>> = vec![None; m.len()];
        for _ in 0..majority - m.len() {
            let a = rng.random_range(0..m.len());
            let nn = neighbours[a].get_or_insert_with(|| {
                let mut d: Vec<(f64, usize)> = m
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != a)
                    .map(|(j, &idx)| (sq_dist(row(m[a]), row(idx)), j))
                    .collect();
                d.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
                d.into_iter().take(cfg.k_neighbors).map(|(_, j)| j).collect()
            });
            let b = nn[rng.random_range(0..nn.len())];
            let t = T::from(rng.random::<f64>()).expect("representable gap");
            synth.extend(row(m[a]).iter().zip(row(m[b])).map(|(&p, &q)| p + t * (q - p)));
            y_out.push(c);
        }
    }
    let extra = y_out.len() - y.len();
    let synth = Array2::from_shape_vec((extra, x.ncols()), synth).expect("synthetic rows");
    let out = ndarray::concatenate(Axis(0), &[x.view(), synth.view()]).expect("same width");
    Ok((out, y_out))
}
