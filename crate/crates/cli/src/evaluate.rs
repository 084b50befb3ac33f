use std::path::Path;

use lungxai::metrics::{emit_report, EvalReport};

use crate::common::{check_classes, load_model, load_split, open_run, single_branch_for_model, Loaded};
use crate::config::{split_name, FlagOverrides};
use crate::error::{CliError, CliResult};
use crate::rundir::Staged;
use crate::Common;

pub fn run(common: &Common, root: &Path, split: &str, model: Option<&Path>) -> CliResult<()> {
    let run = open_run(root, common, FlagOverrides::default())?;
    let split = split_name(split)?;
    let branches = run.cfg.branch.expand();
    single_branch_for_model(&branches, model)?;
    // every model and the split must load before any output is created
    let loaded = branches
        .iter()
        .map(|&b| load_model(&run, b, model))
        .collect::<CliResult<Vec<Loaded>>>()?;
    let ds = load_split(&run.root, split)?;
    if ds.is_empty() {
        return Err(CliError::Data(format!("split {split} is empty")));
    }
    let (images, labels) = (ds.images(), ds.labels());
    let mut reports = Vec::new();
    for m in &loaded {
        check_classes(m.classes(), &ds.classes)?;
        let (scores, kind) = m.scores(&images)?;
        let report = EvalReport::from_scores(&m.model_id(), &ds.manifest_hash(), &ds.classes, &labels, scores.view(), kind)?;
        reports.push(report);
    }
    for (m, report) in loaded.iter().zip(&reports) {
        let stage = Staged::fresh(&run.root.join("eval"), &format!("{}-{split}", m.branch().name()))?;
        emit_report(report, stage.path())?;
        let dir = stage.commit()?;
        println!("{} {split} accuracy {:.4} -> {}", m.branch().name(), report.accuracy, dir.display());
    }
    Ok(())
}
