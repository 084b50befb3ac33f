use std::collections::BTreeMap;

use lungxai_tensor::nn::{load_state_dict, state_dict};
use lungxai_tensor::optim::Adam;
use lungxai_tensor::{no_grad, Tensor, Var};
use ndarray::{Array4, Axis, Ix2, Ix4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::focal::{focal_loss, focal_loss_value, FocalLossConfig};
use super::model::DenseBranchModel;
use crate::datapipe::{one_hot, ImageTensor};
use crate::error::{invalid, Error, Result};
use crate::metrics::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-4,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept; `None` when no validation data.
    pub best_epoch: Option<usize>,
    pub seed: u64,
    pub config: serde_json::Value,
}

/// Images paired with labels.
#[derive(Clone, Copy)]
pub struct Labeled<'a> {
    pub images: &'a [&'a ImageTensor],
    pub labels: &'a [usize],
}

/// Per-sample inputs: raw images, or backbone features computed once when
/// the backbone is frozen.
enum Source {
    Images,
    Features(Array4<f32>),
}

impl Source {
    fn logits(&self, model: &DenseBranchModel, data: &Labeled, idx: &[usize], train: bool) -> Result<Var> {
        match self {
            Source::Images => {
                let imgs: Vec<&ImageTensor> = idx.iter().map(|&i| data.images[i]).collect();
                model.forward(&Var::constant(model.batch(&imgs)?), train)
            }
            Source::Features(f) => {
                let sel = f.select(Axis(0), idx).mapv(f64::from).into_dyn();
                Ok(model.head_forward(&Var::constant(sel), None)?.logits)
            }
        }
    }
}

fn cache_features(model: &DenseBranchModel, data: Labeled) -> Result<Source> {
    if model.backbone_trainable() || data.images.is_empty() {
        return Ok(Source::Images);
    }
    let mut parts = Vec::new();
    no_grad(|| -> Result<()> {
        for chunk in data.images.chunks(16) {
            let f = model.backbone_features(&Var::constant(model.batch(chunk)?), false)?;
            let f = f.value().view().into_dimensionality::<Ix4>().expect("NCHW").mapv(|v| v as f32);
            parts.push(f);
        }
        Ok(())
    })?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(Source::Features(ndarray::concatenate(Axis(0), &views).expect("same feature shape")))
}

fn targets(labels: &[usize], idx: &[usize], k: usize) -> Result<ndarray::Array2<f64>> {
    one_hot(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), k)
}

fn evaluate(model: &DenseBranchModel, src: &Source, data: &Labeled, loss: &FocalLossConfig) -> Result<(f64, f64)> {
    let k = model.config.num_classes;
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    no_grad(|| -> Result<()> {
        let all: Vec<usize> = (0..data.labels.len()).collect();
        for idx in all.chunks(16) {
            let p = src.logits(model, data, idx, false)?.softmax()?;
            let p = p.value().view().into_dimensionality::<Ix2>().expect("[N, K]").to_owned();
            let y = targets(data.labels, idx, k)?;
            loss_sum += focal_loss_value(p.view(), y.view(), loss)? * idx.len() as f64;
            for (row, &i) in p.rows().into_iter().zip(idx) {
                correct += usize::from(argmax(&row.to_vec()) == data.labels[i]);
            }
        }
        Ok(())
    })?;
    let n = data.labels.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Adam on the focal loss. After training the weights of the epoch with
/// the best validation accuracy (ties: lower validation loss) are restored.
pub fn train(
    model: &mut DenseBranchModel,
    train_data: Labeled,
    val_data: Labeled,
    loss: &FocalLossConfig,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    let k = model.config.num_classes;
    loss.validate(k)?;
    if train_data.images.len() != train_data.labels.len() || val_data.images.len() != val_data.labels.len() {
        return Err(invalid!("image and label counts differ"));
    }
    if train_data.images.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if let Some(&bad) = train_data.labels.iter().chain(val_data.labels).find(|&&y| y >= k) {
        return Err(invalid!("label {bad} out of range for {k} classes"));
    }
    let snapshot = serde_json::json!({ "model": model.config, "train": cfg, "loss": loss });
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: None,
        seed: cfg.seed,
        config: snapshot,
    };
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let train_src = cache_features(model, train_data)?;
    let val_src = cache_features(model, val_data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_data.labels.len()).collect();
    let mut best: Option<(f64, f64, BTreeMap<String, Tensor>)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let probs = train_src.logits(model, &train_data, idx, true)?.softmax()?;
            let y = targets(train_data.labels, idx, k)?;
            let l = focal_loss(&probs, y.view(), loss)?;
            let lv = l.item();
            if !lv.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss is {lv} at epoch {} batch {b}; lower the learning rate (currently {})",
                    epoch + 1,
                    cfg.learning_rate
                )));
            }
            let grads = l.backward()?;
            opt.step(model, &grads);
            loss_sum += lv * idx.len() as f64;
            let p = probs.value().view().into_dimensionality::<Ix2>().expect("[N, K]");
            for (row, &i) in p.rows().into_iter().zip(idx) {
                correct += usize::from(argmax(&row.to_vec()) == train_data.labels[i]);
            }
        }
        let n = order.len() as f64;
        let mut stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: None,
            val_accuracy: None,
        };
        if !val_data.labels.is_empty() {
            let (vl, va) = evaluate(model, &val_src, &val_data, loss)?;
            stats.val_loss = Some(vl);
            stats.val_accuracy = Some(va);
            let better = best
                .as_ref()
                .is_none_or(|(ba, bl, _)| va > *ba || (va == *ba && vl < *bl));
            if better {
                best = Some((va, vl, state_dict(model, "")));
                history.best_epoch = Some(epoch + 1);
            }
        }
        log::info!(
            "epoch {}/{}: loss {:.4} acc {:.3} val_loss {:?} val_acc {:?}",
            stats.epoch,
            cfg.epochs,
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy
        );
        history.epochs.push(stats);
    }
    if let Some((_, _, state)) = best {
        load_state_dict(model, "", &state)?;
    }
    Ok(history)
}
