use std::path::Path;

use lungxai_tensor::io::{from_safetensors_bytes, to_safetensors_bytes};
use lungxai_tensor::nn::{load_state_dict, state_dict};

use super::model::{build_model, DenseBranchConfig, DenseBranchModel};
use super::train::TrainHistory;
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_json, write_json};

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.json";
pub const CLASSES_FILE: &str = "classes.json";

/// A trained dense-branch model with its class names and history.
pub struct DenseArtifact {
    pub model: DenseBranchModel,
    pub classes: Vec<String>,
    pub history: Option<TrainHistory>,
}

pub fn save_artifact(dir: &Path, model: &DenseBranchModel, classes: &[String], history: &TrainHistory) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    atomic_write(&dir.join(WEIGHTS_FILE), &to_safetensors_bytes(&state_dict(model, ""))?)?;
    write_json(&dir.join(CONFIG_FILE), &model.config)?;
    write_json(&dir.join(HISTORY_FILE), history)?;
    write_json(&dir.join(CLASSES_FILE), classes)
}

pub fn load_artifact(dir: &Path) -> Result<DenseArtifact> {
    let weights = dir.join(WEIGHTS_FILE);
    if !weights.is_file() {
        return Err(Error::Data(format!("no dense model at {}", dir.display())));
    }
    let config: DenseBranchConfig = read_json(&dir.join(CONFIG_FILE))?;
    let classes: Vec<String> = read_json(&dir.join(CLASSES_FILE))?;
    if classes.len() != config.num_classes {
        return Err(Error::format(dir, format!("{} class names for {} outputs", classes.len(), config.num_classes)));
    }
    let history_path = dir.join(HISTORY_FILE);
    let history = history_path.is_file().then(|| read_json(&history_path)).transpose()?;
    let mut model = build_model(&config)?;
    let bytes = std::fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
    load_state_dict(&mut model, "", &from_safetensors_bytes(&bytes)?)?;
    Ok(DenseArtifact {
        model,
        classes,
        history,
    })
}
