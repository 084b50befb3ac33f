use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{train_on_gram, Kernel, KernelSpec};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
const SCORE_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub kernel: KernelSpec,
    pub c: f64,
}

/// `{linear, rbf} x cs`.
pub fn default_grid(cs: &[f64]) -> Vec<GridCell> {
    [KernelSpec::Linear, KernelSpec::Rbf { gamma: None }]
        .into_iter()
        .flat_map(|kernel| cs.iter().map(move |&c| GridCell { kernel, c }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub kernel: Kernel,
    pub c: f64,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: CvRow,
    pub table: Vec<CvRow>,
    pub folds: usize,
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let k = y.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); k];
    for (i, &l) in y.iter().enumerate() {
        by_class[l].push(i);
    }
    let min = by_class.iter().filter(|c| !c.is_empty()).map(Vec::len).min().unwrap_or(0);
    if folds > min {
        return Err(Error::Data(format!(
            "{folds} folds exceed the smallest class size {min}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; y.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            assign[i] = pos % folds;
        }
    }
    Ok(assign)
}

fn kernel_rank(k: KernelSpec) -> u8 {
    match k {
        KernelSpec::Linear => 0,
        KernelSpec::Rbf { .. } => 1,
    }
}

/// Grid search by stratified k-fold accuracy. Ties within 1e-12 go to the
/// linear kernel, then to the smaller C.
pub fn hyperparam_search(
    x: ArrayView2<f64>,
    y: &[usize],
    classes: &[String],
    grid: &[GridCell],
    folds: usize,
    seed: u64,
) -> Result<SearchResult> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    if x.nrows() != y.len() {
        return Err(invalid!("{} rows but {} labels", x.nrows(), y.len()));
    }
    let assign = stratified_folds(y, folds, seed)?;
    let mut cells = grid.to_vec();
    cells.sort_by(|a, b| kernel_rank(a.kernel).cmp(&kernel_rank(b.kernel)).then(a.c.total_cmp(&b.c)));

    let mut table = Vec::with_capacity(cells.len());
    let mut cached: Option<(KernelSpec, Kernel, ndarray::Array2<f64>)> = None;
    for cell in &cells {
        if cached.as_ref().is_none_or(|(spec, _, _)| *spec != cell.kernel) {
            let kernel = cell.kernel.resolve(x);
            cached = Some((cell.kernel, kernel, kernel.matrix(x, x)));
        }
        let (_, kernel, gram) = cached.as_ref().expect("just filled");
        let mut fold_accuracy = Vec::with_capacity(folds);
        for f in 0..folds {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assign[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| assign[i] == f).collect();
            let g = gram.select(Axis(0), &train).select(Axis(1), &train);
            let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let model = train_on_gram(g.view(), x.select(Axis(0), &train).view(), &yt, classes, *kernel, cell.c)?;
            let pred = model.predict(x.select(Axis(0), &test).view())?;
            let correct = test.iter().zip(&pred).filter(|(&i, &p)| y[i] == p).count();
            fold_accuracy.push(correct as f64 / test.len() as f64);
        }
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
        log::info!("cv {:?} C={}: {:.4}", kernel, cell.c, mean_accuracy);
        table.push(CvRow {
            kernel: *kernel,
            c: cell.c,
            fold_accuracy,
            mean_accuracy,
        });
    }
    let mut best = &table[0];
    for row in &table[1..] {
        if row.mean_accuracy > best.mean_accuracy + SCORE_TIE {
            best = row;
        }
    }
    Ok(SearchResult {
        best: best.clone(),
        table,
        folds,
    })
}
