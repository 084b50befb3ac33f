use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ShapExplanation;
use crate::error::{invalid, Error, Result};
use crate::io::write_json;
use crate::render::{Canvas, Frame, BLACK, BLUE, GREY, RED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: usize,
    pub mean_abs_phi: f64,
}

/// Features ordered by mean |phi| over a set of explanations; features
/// with zero mean are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryData {
    pub explanations: usize,
    pub ranking: Vec<RankedFeature>,
    /// Every attribution was zero.
    pub all_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: usize,
    pub phi: f64,
}

/// One instance: base value, signed contributions by decreasing |phi|,
/// and the model output they add up to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceData {
    pub class_idx: usize,
    pub base_value: f64,
    pub contributions: Vec<Contribution>,
    pub fx: f64,
    /// `base_value + sum(phi)`.
    pub reconstructed: f64,
}

pub fn summary_data(expls: &[ShapExplanation]) -> Result<SummaryData> {
    let first = expls.first().ok_or_else(|| invalid!("summary needs at least one explanation"))?;
    let d = first.phi.len();
    if expls.iter().any(|e| e.phi.len() != d) {
        return Err(invalid!("explanations have differing widths"));
    }
    let mut ranking: Vec<RankedFeature> = (0..d)
        .map(|j| RankedFeature {
            feature: first.feature_ids.get(j).copied().unwrap_or(j),
            mean_abs_phi: expls.iter().map(|e| e.phi[j].abs()).sum::<f64>() / expls.len() as f64,
        })
        .filter(|r| r.mean_abs_phi > 0.0)
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then(a.feature.cmp(&b.feature)));
    Ok(SummaryData {
        explanations: expls.len(),
        all_zero: ranking.is_empty(),
        ranking,
    })
}

pub fn force_data(e: &ShapExplanation) -> ForceData {
    let mut contributions: Vec<Contribution> = e
        .phi
        .iter()
        .enumerate()
        .filter(|(_, p)| **p != 0.0)
        .map(|(j, &phi)| Contribution {
            feature: e.feature_ids.get(j).copied().unwrap_or(j),
            phi,
        })
        .collect();
    contributions.sort_by(|a, b| b.phi.abs().total_cmp(&a.phi.abs()).then(a.feature.cmp(&b.feature)));
    ForceData {
        class_idx: e.class_idx,
        base_value: e.base_value,
        fx: e.fx,
        reconstructed: e.base_value + e.phi.iter().sum::<f64>(),
        contributions,
    }
}

/// Horizontal bars of the `top` highest-ranked features.
pub fn render_summary(s: &SummaryData, top: usize, path: &Path) -> Result<()> {
    let rows = s.ranking.len().min(top).max(1);
    let mut c = Canvas::new(480, (rows * 14 + 40) as u32);
    let f = Frame {
        left: 20,
        top: 20,
        width: 440,
        height: (rows * 14) as i64,
    };
    f.draw_box(&mut c);
    let max = s.ranking.first().map_or(1.0, |r| r.mean_abs_phi);
    for (i, r) in s.ranking.iter().take(rows).enumerate() {
        let y = f.top + (i * 14) as i64 + 3;
        let len = (r.mean_abs_phi / max * f.width as f64).round() as i64;
        c.fill_rect(f.left, y, f.left + len, y + 9, BLUE);
    }
    c.save_png(path)
}

/// A single stacked bar from `base_value` to `f(x)`: red segments push
/// the output up, blue ones down.
pub fn render_force(fd: &ForceData, path: &Path) -> Result<()> {
    let mut c = Canvas::new(600, 120);
    let f = Frame {
        left: 20,
        top: 30,
        width: 560,
        height: 60,
    };
    let mut lo = fd.base_value.min(fd.fx);
    let mut hi = fd.base_value.max(fd.fx);
    let mut pos = fd.base_value;
    for ct in &fd.contributions {
        pos += ct.phi;
        lo = lo.min(pos);
        hi = hi.max(pos);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_x = |v: f64| f.left + ((v - lo) / span * f.width as f64).round() as i64;
    let mut pos = fd.base_value;
    for (i, ct) in fd.contributions.iter().enumerate() {
        let next = pos + ct.phi;
        let colour = if ct.phi > 0.0 { RED } else { BLUE };
        let (a, b) = (to_x(pos.min(next)), to_x(pos.max(next)));
        let y = f.top + 10 + (i % 2) as i64 * 2;
        c.fill_rect(a, y, b.max(a + 1), y + 36, colour);
        pos = next;
    }
    let bx = to_x(fd.base_value);
    c.line(bx, f.top, bx, f.top + f.height, GREY);
    let fxx = to_x(fd.fx);
    c.thick_line(fxx, f.top, fxx, f.top + f.height, BLACK);
    c.save_png(path)
}

#[derive(Serialize)]
struct ShapFile<'a> {
    explanations: &'a [ShapExplanation],
    summary: &'a SummaryData,
    force: &'a [ForceData],
}

/// Writes `shap.json`, `shap_summary.png` and `shap_force_<i>.png`.
pub fn write_plot_data(expls: &[ShapExplanation], out_dir: &Path) -> Result<(SummaryData, Vec<PathBuf>)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = summary_data(expls)?;
    let force: Vec<ForceData> = expls.iter().map(force_data).collect();
    let mut written = Vec::new();
    let p = out_dir.join("shap.json");
    write_json(
        &p,
        &ShapFile {
            explanations: expls,
            summary: &summary,
            force: &force,
        },
    )?;
    written.push(p);
    let p = out_dir.join("shap_summary.png");
    render_summary(&summary, 20, &p)?;
    written.push(p);
    for (i, fd) in force.iter().enumerate() {
        let p = out_dir.join(format!("shap_force_{i}.png"));
        render_force(fd, &p)?;
        written.push(p);
    }
    Ok((summary, written))
}
