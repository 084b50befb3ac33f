use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lungxai::io::{atomic_write, read_json, write_json};
use lungxai::metrics::{fmt2, EvalReport};
use serde::Serialize;

use crate::common::CONFIG_FILE;
use crate::config::SPLITS;
use crate::error::{io_err, CliError, CliResult};
use crate::rundir::Staged;

/// `<branch>-<split>` or `<branch>-<split>-<n>`; the highest `n` wins.
fn latest_evals(eval_dir: &Path) -> CliResult<BTreeMap<(String, String), (usize, PathBuf)>> {
    let mut found: BTreeMap<(String, String), (usize, PathBuf)> = BTreeMap::new();
    if !eval_dir.is_dir() {
        return Ok(found);
    }
    for entry in std::fs::read_dir(eval_dir).map_err(|e| io_err(eval_dir, e))? {
        let path = entry.map_err(|e| io_err(eval_dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            continue;
        };
        let mut parts = name.splitn(3, '-');
        let (Some(branch), Some(split)) = (parts.next(), parts.next()) else {
            continue;
        };
        if !["dense", "svm"].contains(&branch) || !SPLITS.contains(&split) || !path.join("metrics.json").is_file() {
            continue;
        }
        let n = match parts.next() {
            None => 1,
            Some(s) => match s.parse::<usize>() {
                Ok(n) => n,
                Err(_) => continue,
            },
        };
        let key = (branch.to_string(), split.to_string());
        if found.get(&key).is_none_or(|(m, _)| n > *m) {
            found.insert(key, (n, path));
        }
    }
    Ok(found)
}

#[derive(Serialize)]
struct Entry {
    branch: String,
    split: String,
    source: String,
    accuracy: f64,
    macro_f1: f64,
    auc: Vec<Option<f64>>,
    report: EvalReport,
}

pub fn run(root: &Path) -> CliResult<()> {
    if !root.join(CONFIG_FILE).is_file() {
        return Err(CliError::Data(format!("{} is not a run directory (no {CONFIG_FILE})", root.display())));
    }
    let latest = latest_evals(&root.join("eval"))?;
    if latest.is_empty() {
        return Err(CliError::Data(format!("no evaluations under {}; run evaluate first", root.join("eval").display())));
    }
    let mut entries = Vec::new();
    for ((branch, split), (_, path)) in &latest {
        let report: EvalReport = read_json(&path.join("metrics.json"))?;
        let macro_f1 = report.per_class.iter().map(|c| c.f1).sum::<f64>() / report.per_class.len().max(1) as f64;
        entries.push(Entry {
            branch: branch.clone(),
            split: split.clone(),
            source: path.strip_prefix(root).unwrap_or(path).display().to_string(),
            accuracy: report.accuracy,
            macro_f1,
            auc: report.auc.clone(),
            report,
        });
    }
    let md = markdown(&entries);
    let stage = Staged::fresh(&root.join("report"), "summary")?;
    atomic_write(&stage.path().join("report.md"), md.as_bytes())?;
    write_json(&stage.path().join("report.json"), &entries)?;
    let dir = stage.commit()?;
    for e in &entries {
        println!("{} {} accuracy {:.4} macro-F1 {:.4}", e.branch, e.split, e.accuracy, e.macro_f1);
    }
    println!("report -> {}", dir.display());
    Ok(())
}

fn markdown(entries: &[Entry]) -> String {
    let classes = &entries[0].report.confusion.classes;
    let mut s = String::from("# Branch comparison\n\n| Branch | Split | Accuracy | Macro F1 |");
    for c in classes {
        s.push_str(&format!(" AUC {c} |"));
    }
    s.push_str("\n|---|---|---|---|");
    s.push_str(&"---|".repeat(classes.len()));
    s.push('\n');
    for e in entries {
        s.push_str(&format!("| {} | {} | {} | {} |", e.branch, e.split, fmt2(e.accuracy), fmt2(e.macro_f1)));
        for a in &e.auc {
            s.push_str(&format!(" {} |", a.map_or_else(|| "undefined".to_string(), fmt2)));
        }
        s.push('\n');
    }
    for e in entries {
        s.push_str(&format!("\n## {} on {} ({})\n\n", e.branch, e.split, e.source));
        for line in e.report.to_markdown().lines() {
            if let Some(title) = line.strip_prefix("# ") {
                s.push_str(&format!("### {title}\n"));
            } else {
                s.push_str(line);
                s.push('\n');
            }
        }
    }
    s
}
