use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest width for full coalition enumeration.
pub const MAX_EXACT_DIMS: usize = 15;
const EVAL_ROWS: usize = 8192;

/// Weighted reference rows standing in for "feature absent".
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub rows: Array2<f64>,
    /// Non-negative, summing to 1.
    pub weights: Vec<f64>,
    pub description: String,
}

impl Background {
    pub fn uniform(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(invalid!("background set is empty"));
        }
        let n = rows.nrows();
        Ok(Self {
            rows,
            weights: vec![1.0 / n as f64; n],
            description: format!("{n} rows, uniform"),
        })
    }

    pub fn dims(&self) -> usize {
        self.rows.ncols()
    }
}

/// Summarises `x` by `k` k-means centroids (k-means++ seeding, Lloyd
/// iterations) weighted by cluster size. Returns the rows themselves when
/// `x` has at most `k` rows.
pub fn kmeans_background(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<Background> {
    let n = x.nrows();
    if n == 0 || k == 0 {
        return Err(invalid!("k-means background needs rows and k >= 1"));
    }
    if n <= k {
        return Background::uniform(x.to_owned());
    }
    let dist2 = |a: ArrayView1<f64>, b: ArrayView1<f64>| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![rng.random_range(0..n)];
    let mut d: Vec<f64> = (0..n).map(|i| dist2(x.row(i), x.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if r < di {
                    pick = i;
                    break;
                }
                r -= di;
            }
            pick
        } else {
            (0..n).find(|i| !centers.contains(i)).expect("n > k")
        };
        centers.push(next);
        for (i, di) in d.iter_mut().enumerate() {
            *di = di.min(dist2(x.row(i), x.row(next)));
        }
    }
    let mut c = x.select(Axis(0), &centers);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| dist2(x.row(i), c.row(a)).total_cmp(&dist2(x.row(i), c.row(b))))
                .expect("k >= 1");
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for j in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
            if !members.is_empty() {
                c.row_mut(j).assign(&x.select(Axis(0), &members).mean_axis(Axis(0)).expect("non-empty"));
            }
        }
    }
    let mut counts = vec![0usize; k];
    assign.iter().for_each(|&a| counts[a] += 1);
    let keep: Vec<usize> = (0..k).filter(|&j| counts[j] > 0).collect();
    Ok(Background {
        rows: c.select(Axis(0), &keep),
        weights: keep.iter().map(|&j| counts[j] as f64 / n as f64).collect(),
        description: format!("k-means summary of {n} rows into {} centroids", keep.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    /// Full enumeration when the budget covers every coalition, otherwise
    /// paired sampling.
    Auto,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapConfig {
    /// Coalition budget; `None` means `2 D + 2048`.
    pub n_samples: Option<usize>,
    pub mode: ShapMode,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self {
            n_samples: None,
            mode: ShapMode::Auto,
            seed: 42,
        }
    }
}

/// `f(x) = base_value + sum(phi)` for one output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub fx: f64,
    pub class_idx: usize,
    pub feature_ids: Vec<usize>,
    pub background: String,
    pub exact: bool,
    pub coalitions: usize,
}

impl ShapExplanation {
    pub fn additivity_gap(&self) -> f64 {
        (self.fx - self.base_value - self.phi.iter().sum::<f64>()).abs()
    }
}

/// Background-imputed value `v(S)` of each coalition mask.
struct Game<'a, F> {
    f: &'a F,
    x: ArrayView1<'a, f64>,
    bg: &'a Background,
    class_idx: usize,
    /// Coordinates that coalitions range over; others stay at background.
    vary: &'a [usize],
}

impl<F> Game<'_, F>
where
    F: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    fn column(&self, out: Array2<f64>, expected_rows: usize) -> Result<Vec<f64>> {
        if out.nrows() != expected_rows || self.class_idx >= out.ncols() {
            return Err(invalid!(
                "model returned {:?} for {expected_rows} rows and class {}",
                out.dim(),
                self.class_idx
            ));
        }
        Ok(out.column(self.class_idx).to_vec())
    }

    fn values(&self, masks: &[Vec<bool>]) -> Result<Vec<f64>> {
        let nb = self.bg.rows.nrows();
        let per_chunk = (EVAL_ROWS / nb).max(1);
        let mut out = Vec::with_capacity(masks.len());
        for chunk in masks.chunks(per_chunk) {
            let mut rows = Array2::zeros((chunk.len() * nb, self.x.len()));
            for (m, mask) in chunk.iter().enumerate() {
                for b in 0..nb {
                    let mut r = rows.row_mut(m * nb + b);
                    r.assign(&self.bg.rows.row(b));
                    for (bit, &d) in mask.iter().zip(self.vary) {
                        if *bit {
                            r[d] = self.x[d];
                        }
                    }
                }
            }
            let y = self.column((self.f)(rows.view())?, chunk.len() * nb)?;
            for m in 0..chunk.len() {
                out.push((0..nb).map(|b| self.bg.weights[b] * y[m * nb + b]).sum());
            }
        }
        Ok(out)
    }

    fn fx(&self) -> Result<f64> {
        let row = self.x.insert_axis(Axis(0));
        Ok(self.column((self.f)(row)?, 1)?[0])
    }
}

fn check_inputs(x: ArrayView1<f64>, bg: &Background) -> Result<()> {
    if bg.rows.nrows() == 0 {
        return Err(invalid!("background set is empty"));
    }
    if bg.dims() != x.len() || bg.weights.len() != bg.rows.nrows() {
        return Err(invalid!("background is {:?} with {} weights for a {}-wide input", bg.rows.dim(), bg.weights.len(), x.len()));
    }
    Ok(())
}

fn varying(x: ArrayView1<f64>, bg: &Background) -> Vec<usize> {
    (0..x.len()).filter(|&d| bg.rows.column(d).iter().any(|&v| v != x[d])).collect()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn mask_from_bits(bits: u64, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits >> i & 1 == 1).collect()
}

/// Exact Shapley values by enumerating all `2^D` coalitions.
pub fn shap_exact<F>(f: &F, x: ArrayView1<f64>, bg: &Background, class_idx: usize) -> Result<ShapExplanation>
where
    F: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    check_inputs(x, bg)?;
    let d = x.len();
    if d > MAX_EXACT_DIMS {
        return Err(invalid!("exact Shapley enumeration supports at most {MAX_EXACT_DIMS} features, got {d}"));
    }
    let all: Vec<usize> = (0..d).collect();
    let game = Game { f, x, bg, class_idx, vary: &all };
    let masks: Vec<Vec<bool>> = (0..1u64 << d).map(|b| mask_from_bits(b, d)).collect();
    let v = game.values(&masks)?;
    let fact = |n: usize| (1..=n).fold(1.0, |a, i| a * i as f64);
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0..1usize << d {
            if s >> i & 1 == 0 {
                let size = s.count_ones() as usize;
                let w = fact(size) * fact(d - size - 1) / fact(d);
                *p += w * (v[s | 1 << i] - v[s]);
            }
        }
    }
    Ok(ShapExplanation {
        base_value: v[0],
        phi,
        fx: game.fx()?,
        class_idx,
        feature_ids: all,
        background: bg.description.clone(),
        exact: true,
        coalitions: 1 << d,
    })
}

/// Kernel SHAP: a weighted least-squares fit of coalition values with the
/// efficiency constraint `sum(phi) = f(x) - base` imposed by elimination.
pub fn kernel_shap<F>(f: &F, x: ArrayView1<f64>, bg: &Background, class_idx: usize, cfg: &ShapConfig) -> Result<ShapExplanation>
where
    F: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    check_inputs(x, bg)?;
    let d = x.len();
    let vary = varying(x, bg);
    let m = vary.len();
    let game = Game { f, x, bg, class_idx, vary: &vary };
    let base = game.values(&[vec![false; m]])?[0];
    let fx = game.fx()?;
    let mut phi = vec![0.0; d];
    let explanation = |phi: Vec<f64>, exact: bool, coalitions: usize| ShapExplanation {
        base_value: base,
        phi,
        fx,
        class_idx,
        feature_ids: (0..d).collect(),
        background: bg.description.clone(),
        exact,
        coalitions,
    };
    if m == 0 {
        return Ok(explanation(phi, true, 1));
    }
    if m == 1 {
        phi[vary[0]] = fx - base;
        return Ok(explanation(phi, true, 2));
    }

    let budget = cfg.n_samples.unwrap_or(2 * m + 2048);
    let full = if m < 63 { (1u64 << m) - 2 } else { u64::MAX };
    let exact = cfg.mode == ShapMode::Exact || budget as u64 >= full;
    if exact && m > MAX_EXACT_DIMS {
        return Err(invalid!("exact mode supports at most {MAX_EXACT_DIMS} varying features, got {m}"));
    }
    if !exact && budget < m + 2 {
        return Err(invalid!("n_samples {budget} is below D + 2 = {}", m + 2));
    }
    let (masks, weights) = if exact {
        enumerate_coalitions(m)
    } else {
        sample_coalitions(m, budget, cfg.seed)
    };
    let v = game.values(&masks)?;
    let solved = solve_constrained(&masks, &weights, &v, base, fx)?;
    for (k, &dim) in vary.iter().enumerate() {
        phi[dim] = solved[k];
    }
    Ok(explanation(phi, exact, masks.len()))
}

fn kernel_weight(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binom(m, s) * s as f64 * (m - s) as f64)
}

fn enumerate_coalitions(m: usize) -> (Vec<Vec<bool>>, Vec<f64>) {
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    for bits in 1..(1u64 << m) - 1 {
        let s = bits.count_ones() as usize;
        masks.push(mask_from_bits(bits, m));
        weights.push(kernel_weight(m, s));
    }
    (masks, weights)
}

/// Paired sampling: coalition sizes whose whole layer fits the remaining
/// budget are enumerated with exact weights, the rest are drawn in
/// complementary pairs from the Shapley-kernel size distribution.
fn sample_coalitions(m: usize, budget: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>) {
    let n_sizes = (m - 1).div_ceil(2);
    let paired = |s: usize| s != m - s;
    // total kernel mass of each size layer (and its complement)
    let mut mass: Vec<f64> = (1..=n_sizes)
        .map(|s| (m - 1) as f64 / (s * (m - s)) as f64 * if paired(s) { 2.0 } else { 1.0 })
        .collect();
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|w| *w /= total);

    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut left = budget;
    let mut remaining = mass.clone();
    let mut full_sizes = 0;
    for s in 1..=n_sizes {
        let layer = binom(m, s) * if paired(s) { 2.0 } else { 1.0 };
        if layer > left as f64 || (left as f64) * remaining[s - 1] / layer < 1.0 - 1e-8 {
            break;
        }
        full_sizes = s;
        left -= layer as usize;
        if remaining[s - 1] < 1.0 {
            let r = remaining[s - 1];
            remaining.iter_mut().for_each(|w| *w /= 1.0 - r);
        }
        let w = mass[s - 1] / layer;
        for_each_subset(m, s, |mask| {
            if paired(s) {
                masks.push(mask.iter().map(|b| !b).collect());
                weights.push(w);
            }
            masks.push(mask);
            weights.push(w);
        });
    }
    let n_fixed = masks.len();
    if full_sizes < n_sizes && left >= 2 {
        let rest: Vec<f64> = mass[full_sizes..].to_vec();
        let rest_mass: f64 = rest.iter().sum();
        let cdf: Vec<f64> = rest
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w / rest_mass;
                Some(*acc)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut draws = 0;
        while left >= 2 && draws < budget * 4 {
            draws += 1;
            let u: f64 = rng.random();
            let idx = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
            let s = full_sizes + 1 + idx;
            let mut mask = vec![false; m];
            for i in sample(&mut rng, m, s) {
                mask[i] = true;
            }
            let mut add = |mask: Vec<bool>, masks: &mut Vec<Vec<bool>>, weights: &mut Vec<f64>| -> bool {
                match seen.get(&mask) {
                    Some(&at) => {
                        weights[at] += 1.0;
                        false
                    }
                    None => {
                        seen.insert(mask.clone(), masks.len());
                        masks.push(mask);
                        weights.push(1.0);
                        true
                    }
                }
            };
            let comp: Vec<bool> = mask.iter().map(|b| !b).collect();
            if add(mask, &mut masks, &mut weights) {
                left -= 1;
            }
            if paired(s) && add(comp, &mut masks, &mut weights) {
                left -= 1;
            }
        }
        let sampled: f64 = weights[n_fixed..].iter().sum();
        if sampled > 0.0 {
            weights[n_fixed..].iter_mut().for_each(|w| *w *= rest_mass / sampled);
        }
    }
    (masks, weights)
}

fn for_each_subset(m: usize, s: usize, mut f: impl FnMut(Vec<bool>)) {
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        let mut mask = vec![false; m];
        idx.iter().for_each(|&i| mask[i] = true);
        f(mask);
        let Some(p) = (0..s).rev().find(|&p| idx[p] < m - s + p) else {
            return;
        };
        idx[p] += 1;
        for q in p + 1..s {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Minimises `sum_k w_k (v_k - base - z_k . phi)^2` subject to
/// `sum(phi) = fx - base`, eliminating the last coordinate.
fn solve_constrained(masks: &[Vec<bool>], weights: &[f64], v: &[f64], base: f64, fx: f64) -> Result<Vec<f64>> {
    let m = masks[0].len();
    let total = fx - base;
    let rows = masks.len();
    let mut a = DMatrix::<f64>::zeros(rows, m - 1);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, mask) in masks.iter().enumerate() {
        let last = if mask[m - 1] { 1.0 } else { 0.0 };
        let sw = weights[r].sqrt();
        for j in 0..m - 1 {
            a[(r, j)] = sw * (f64::from(u8::from(mask[j])) - last);
        }
        b[r] = sw * (v[r] - base - last * total);
    }
    let ata = a.tr_mul(&a);
    let atb = a.tr_mul(&b);
    let sol = match ata.clone().lu().solve(&atb) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => ata
            .svd(true, true)
            .solve(&atb, 1e-12)
            .map_err(|e| Error::Diverged(format!("SHAP regression is singular: {e}")))?,
    };
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    phi.push(total - phi.iter().sum::<f64>());
    Ok(phi)
}
