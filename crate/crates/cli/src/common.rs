//! Helpers shared by the commands that operate on an existing run.

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use lungxai::datapipe::{load_dataset_file, resize_bilinear, Dataset, ImageTensor};
use lungxai::dense::{load_artifact, DenseArtifact};
use lungxai::io::sha256_hex;
use lungxai::svm::{Extractor, SvmPipeline};
use ndarray::Array2;

use crate::config::{resolve, split_name, weights_path, Branch, FlagOverrides, RunConfig, OUT_ENV};
use crate::error::{io_err, CliError, CliResult};
use crate::Common;

pub const CONFIG_FILE: &str = "config.toml";
pub const SVM_MODEL_FILE: &str = "model.bin";
pub const SVM_TRAIN_FEATURES: &str = "train_features.bin";

pub struct Run {
    pub root: PathBuf,
    pub cfg: RunConfig,
}

/// Resolves a run's configuration: defaults, the run's config.toml,
/// `--config`, `--set`, then flags.
pub fn open_run(root: &Path, common: &Common, mut flags: FlagOverrides) -> CliResult<Run> {
    let own = root.join(CONFIG_FILE);
    if !own.is_file() {
        return Err(CliError::Data(format!("{} is not a run directory (no {CONFIG_FILE})", root.display())));
    }
    flags.seed = flags.seed.or(common.seed);
    flags.branch = flags.branch.or(common.branch);
    let mut files: Vec<&Path> = vec![&own];
    if let Some(c) = &common.config {
        files.push(c);
    }
    let cfg = resolve(&files, &common.set, std::env::var(OUT_ENV).ok(), &flags)?;
    Ok(Run {
        root: root.to_path_buf(),
        cfg,
    })
}

pub fn split_path(root: &Path, split: &str) -> PathBuf {
    root.join("data").join(format!("{split}.bin"))
}

pub fn load_split(root: &Path, split: &str) -> CliResult<Dataset> {
    let split = split_name(split)?;
    let p = split_path(root, split);
    if !p.is_file() {
        return Err(CliError::Data(format!("missing split file {}", p.display())));
    }
    Ok(load_dataset_file(&p)?)
}

/// Images at `size x size`, resized bilinearly where needed.
pub fn sized<'a>(images: &[&'a ImageTensor], size: usize) -> Vec<Cow<'a, ImageTensor>> {
    images
        .iter()
        .map(|img| {
            if img.dim().0 == size && img.dim().1 == size {
                Cow::Borrowed(*img)
            } else {
                Cow::Owned(resize_bilinear(img.view(), size, size))
            }
        })
        .collect()
}

pub fn refs<'a>(images: &'a [Cow<'a, ImageTensor>]) -> Vec<&'a ImageTensor> {
    images.iter().map(|c| c.as_ref()).collect()
}

pub struct SvmBundle {
    pub dir: PathBuf,
    pub pipeline: SvmPipeline,
    pub extractor: Extractor,
    pub model_id: String,
}

pub enum Loaded {
    Dense(Box<DenseArtifact>),
    Svm(Box<SvmBundle>),
}

impl Loaded {
    pub fn branch(&self) -> Branch {
        match self {
            Loaded::Dense(_) => Branch::Dense,
            Loaded::Svm(_) => Branch::Svm,
        }
    }

    pub fn classes(&self) -> &[String] {
        match self {
            Loaded::Dense(a) => &a.classes,
            Loaded::Svm(s) => s.pipeline.classes(),
        }
    }

    pub fn model_id(&self) -> String {
        match self {
            Loaded::Dense(a) => a.model.fingerprint(),
            Loaded::Svm(s) => s.model_id.clone(),
        }
    }

    /// Softmax probabilities (dense) or decision values (SVM), with the
    /// name of the score kind.
    pub fn scores(&self, images: &[&ImageTensor]) -> CliResult<(Array2<f64>, &'static str)> {
        match self {
            Loaded::Dense(a) => Ok((a.model.predict(images)?, "probability")),
            Loaded::Svm(s) => {
                let resized = sized(images, s.extractor.config.input_size);
                let f = lungxai::svm::extract_features(&refs(&resized), &s.extractor)?;
                Ok((s.pipeline.decision(&f)?, "decision"))
            }
        }
    }
}

pub fn model_dir(run: &Run, branch: Branch, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf)
        .unwrap_or_else(|| run.root.join("models").join(branch.name()))
}

/// Loads a trained model; a missing model is a data error.
pub fn load_model(run: &Run, branch: Branch, over: Option<&Path>) -> CliResult<Loaded> {
    let dir = model_dir(run, branch, over);
    if !dir.is_dir() {
        return Err(CliError::Data(format!("no {} model at {}", branch.name(), dir.display())));
    }
    match branch {
        Branch::Dense => Ok(Loaded::Dense(Box::new(load_artifact(&dir)?))),
        Branch::Svm => {
            let p = dir.join(SVM_MODEL_FILE);
            if !p.is_file() {
                return Err(CliError::Data(format!("no svm model at {}", p.display())));
            }
            let bytes = std::fs::read(&p).map_err(|e| io_err(&p, e))?;
            let pipeline = SvmPipeline::load(&p)?;
            let extractor = Extractor::new(pipeline.extractor.clone(), weights_path(&run.cfg.svm.weights))?;
            if extractor.fingerprint() != pipeline.fingerprint {
                return Err(lungxai::Error::Fingerprint {
                    expected: pipeline.fingerprint.clone(),
                    found: extractor.fingerprint().to_string(),
                }
                .into());
            }
            Ok(Loaded::Svm(Box::new(SvmBundle {
                dir,
                pipeline,
                extractor,
                model_id: sha256_hex(&bytes),
            })))
        }
        Branch::Both => unreachable!("expanded by callers"),
    }
}

pub fn check_classes(model: &[String], data: &[String]) -> CliResult<()> {
    if model != data {
        return Err(CliError::Data(format!("model classes {model:?} differ from data classes {data:?}")));
    }
    Ok(())
}

pub fn single_branch_for_model(branches: &[Branch], model: Option<&Path>) -> CliResult<()> {
    if model.is_some() && branches.len() != 1 {
        return Err(CliError::Usage("--model needs a single --branch (dense or svm)".into()));
    }
    Ok(())
}
