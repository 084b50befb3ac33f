//! Output directories that appear only once complete and never replace an
//! existing one.

use std::path::{Path, PathBuf};

use crate::error::{io_err, CliError, CliResult};

/// A directory written under a hidden temporary name and renamed into place
/// by `commit`. Dropping it uncommitted removes the partial output.
pub struct Staged {
    tmp: PathBuf,
    target: PathBuf,
    committed: bool,
}

fn free_name(parent: &Path, base: &str) -> PathBuf {
    let mut n = 1;
    loop {
        let name = if n == 1 { base.to_string() } else { format!("{base}-{n}") };
        let p = parent.join(name);
        if !p.exists() {
            return p;
        }
        n += 1;
    }
}

impl Staged {
    fn at(parent: &Path, target: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        let name = target.file_name().expect("named target").to_string_lossy().into_owned();
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        }
        std::fs::create_dir(&tmp).map_err(|e| io_err(&tmp, e))?;
        Ok(Self {
            tmp,
            target,
            committed: false,
        })
    }

    /// Targets `parent/base`, or `parent/base-2`, `-3`, ... when taken.
    pub fn fresh(parent: &Path, base: &str) -> CliResult<Self> {
        Self::at(parent, free_name(parent, base))
    }

    /// Targets exactly `parent/name`, refusing if it exists.
    pub fn exact(parent: &Path, name: &str) -> CliResult<Self> {
        let target = parent.join(name);
        if target.exists() {
            return Err(CliError::Usage(format!(
                "{} already exists and outputs are never overwritten; prepare a new run",
                target.display()
            )));
        }
        Self::at(parent, target)
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn commit(mut self) -> CliResult<PathBuf> {
        if self.target.exists() {
            return Err(CliError::Usage(format!("{} appeared while writing; not replacing it", self.target.display())));
        }
        std::fs::rename(&self.tmp, &self.target).map_err(|e| io_err(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.tmp);
        }
    }
}

/// `run-<local time>-s<seed>`.
pub fn run_name(seed: u64) -> String {
    format!("run-{}-s{seed}", chrono::Local::now().format("%Y%m%d-%H%M%S"))
}
