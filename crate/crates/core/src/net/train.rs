use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimizerState};
use super::model::{argmax, TraceSeqModel};
use crate::dataset::SequenceClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    /// Rescales the batch gradient when its norm exceeds this value.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            lr: 0.004,
            lr_decay: 1.0,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the training forward passes, dropout included.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Most probable class for every clip.
pub fn predict_labels(model: &TraceSeqModel, clips: &[SequenceClip]) -> Result<Vec<usize>> {
    clips
        .iter()
        .map(|c| model.predict(&c.features).map(|p| argmax(&p)))
        .collect()
}

pub fn accuracy(model: &TraceSeqModel, clips: &[SequenceClip]) -> Result<f64> {
    if clips.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_labels(model, clips)?;
    let hits = preds.iter().zip(clips).filter(|(p, c)| **p == c.label).count();
    Ok(hits as f64 / clips.len() as f64)
}

/// Mini-batch Adam training with seeded shuffling and dropout.
pub fn train(
    model: &mut TraceSeqModel,
    clips: &[SequenceClip],
    val: Option<&[SequenceClip]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    train_with(model, clips, val, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut TraceSeqModel,
    clips: &[SequenceClip],
    val: Option<&[SequenceClip]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if clips.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let net = *model.config();
    for c in clips.iter().chain(val.unwrap_or(&[])) {
        if c.features.velocity_width() != net.velocity_width
            || c.features.shape_width() != net.shape_width
        {
            return Err(Error::Config(format!(
                "dataset widths ({}, {}) do not match model ({}, {})",
                c.features.velocity_width(),
                c.features.shape_width(),
                net.velocity_width,
                net.shape_width
            )));
        }
        if c.label >= net.classes {
            return Err(Error::Config(format!("label {} outside {} classes", c.label, net.classes)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::for_model(model, cfg.lr);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&clips[i].features, clips[i].label)).collect();
            let (loss, mut grads, batch_hits) = model.batch_gradients(&batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            if let Some(max) = cfg.clip_norm {
                let norm = grads.norm();
                if norm > max {
                    let s = max / norm;
                    grads.data.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam_step(model, &grads, &mut opt)?;
            hits += batch_hits;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / clips.len() as f64,
            train_accuracy: hits as f64 / clips.len() as f64,
            val_accuracy: val.map(|v| accuracy(model, v)).transpose()?,
        };
        on_epoch(&stats);
        history.push(stats);
        opt.lr *= cfg.lr_decay;
    }
    Ok(history)
}
