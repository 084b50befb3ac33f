//! Confusion matrices, per-class precision/recall/F1, one-vs-rest ROC/AUC
//! and report emission.

mod confusion;
mod report;
mod roc;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use report::{classification_report, fmt2, round2, ClassMetrics, ClassificationReport};
pub use roc::{roc_auc_ovr, RocCurve};

use crate::error::{invalid, Error, Result};
use crate::io::{atomic_write, write_json};
use crate::render::{Canvas, Frame, BLUE, GREY};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model_id: String,
    pub dataset_hash: String,
    /// What the ROC scores are: softmax probabilities or SVM decision values.
    pub score_kind: String,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: u64,
    pub auc: Vec<Option<f64>>,
    pub roc: Vec<RocCurve>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Report for a confusion matrix alone; AUC is left undefined.
    pub fn from_confusion(model_id: &str, dataset_hash: &str, cm: ConfusionMatrix) -> Result<Self> {
        let rep = classification_report(&cm)?;
        let k = cm.k();
        let mut out = Self {
            schema_version: METRICS_SCHEMA_VERSION,
            model_id: model_id.to_string(),
            dataset_hash: dataset_hash.to_string(),
            score_kind: "none".to_string(),
            confusion: cm,
            per_class: rep.per_class,
            accuracy: rep.accuracy,
            total: rep.total,
            auc: vec![None; k],
            roc: Vec::new(),
            notes: Vec::new(),
        };
        out.note_precision();
        Ok(out)
    }

    pub fn from_scores(
        model_id: &str,
        dataset_hash: &str,
        classes: &[String],
        y_true: &[usize],
        scores: ArrayView2<f64>,
        score_kind: &str,
    ) -> Result<Self> {
        if scores.ncols() != classes.len() {
            return Err(invalid!("{} score columns for {} classes", scores.ncols(), classes.len()));
        }
        let y_pred: Vec<usize> = scores.rows().into_iter().map(|r| argmax(&r.to_vec())).collect();
        let cm = confusion_matrix(y_true, &y_pred, classes)?;
        let mut out = Self::from_confusion(model_id, dataset_hash, cm)?;
        out.score_kind = score_kind.to_string();
        for c in 0..classes.len() {
            let curve = roc_auc_ovr(y_true, scores, c)?;
            if curve.auc.is_none() {
                out.notes.push(format!(
                    "AUC undefined for {}: {} positives, {} negatives",
                    classes[c], curve.positives, curve.negatives
                ));
            }
            out.auc[c] = curve.auc;
            out.roc.push(curve);
        }
        Ok(out)
    }

    fn note_precision(&mut self) {
        for m in &self.per_class {
            if m.precision_undefined {
                self.notes
                    .push(format!("precision undefined for {}: no predictions, reported as 0", m.name));
            }
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Evaluation report\n");
        let _ = writeln!(s, "- model: `{}`", self.model_id);
        let _ = writeln!(s, "- dataset: `{}`", self.dataset_hash);
        let _ = writeln!(s, "- scores: {}\n", self.score_kind);
        let _ = writeln!(s, "| Class | Precision | Recall | F1-score | Support |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                m.name,
                fmt2(m.precision),
                fmt2(m.recall),
                fmt2(m.f1),
                m.support
            );
        }
        let _ = writeln!(s, "| Accuracy | | | {} | {} |\n", fmt2(self.accuracy), self.total);
        if self.auc.iter().any(Option::is_some) {
            let _ = writeln!(s, "| Class | AUC |\n|---|---|");
            for (m, auc) in self.per_class.iter().zip(&self.auc) {
                let v = auc.map_or_else(|| "undefined".to_string(), fmt2);
                let _ = writeln!(s, "| {} | {} |", m.name, v);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "Confusion matrix (rows true, columns predicted):\n");
        let _ = writeln!(s, "| | {} |", self.confusion.classes.join(" | "));
        let _ = writeln!(s, "|---{}|", "|---".repeat(self.confusion.k()));
        for (name, row) in self.confusion.classes.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "| {} | {} |", name, cells.join(" | "));
        }
        if !self.notes.is_empty() {
            let _ = writeln!(s, "\nNotes:\n");
            for n in &self.notes {
                let _ = writeln!(s, "- {n}");
            }
        }
        s
    }
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(cm.classes.iter().cloned());
    let csv_err = |e: csv::Error| invalid!("csv: {e}");
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in cm.classes.iter().zip(&cm.counts) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| invalid!("csv: {e}"))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_roc(curve: &RocCurve, path: &Path) -> Result<()> {
    let mut c = Canvas::new(420, 420);
    let f = Frame {
        left: 30,
        top: 30,
        width: 360,
        height: 360,
    };
    f.draw_box(&mut c);
    let (x0, y0) = f.px(0.0, 0.0);
    let (x1, y1) = f.px(1.0, 1.0);
    c.line(x0, y0, x1, y1, GREY);
    for w in curve.points.windows(2) {
        let (a, b) = (f.px(w[0].0, w[0].1), f.px(w[1].0, w[1].1));
        c.thick_line(a.0, a.1, b.0, b.1, BLUE);
    }
    c.save_png(path)
}

/// Writes `metrics.json`, `confusion.csv`, `roc_class_<k>.png` and
/// `report.md` into `out_dir`.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let p = out_dir.join("metrics.json");
    write_json(&p, report)?;
    written.push(p);
    let p = out_dir.join("confusion.csv");
    atomic_write(&p, confusion_csv(&report.confusion)?.as_bytes())?;
    written.push(p);
    for curve in &report.roc {
        let p = out_dir.join(format!("roc_class_{}.png", curve.class));
        render_roc(curve, &p)?;
        written.push(p);
    }
    let p = out_dir.join("report.md");
    atomic_write(&p, report.to_markdown().as_bytes())?;
    written.push(p);
    Ok(written)
}
