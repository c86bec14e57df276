//! Seeded training and evaluation loops.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::adam::{adam_step, AdamError, AdamHyper, AdamState};
use super::loss::bce_loss;
use super::model::{Model, ModelError, ModelSpec};
use super::tensor::{Tensor, TensorError};
use crate::dataset::{DatasetError, DatasetManifest, ExperimentSpec, LabeledSet, Split};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("epochs must be >= 1")]
    NoEpochs,
    #[error("{split:?} split of experiment {experiment} is empty")]
    EmptySplit { split: Split, experiment: &'static str },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Adam(#[from] AdamError),
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, seed: 0, lr: 0.001 }
    }
}

/// Losses and accuracies recorded after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Wall-clock seconds for the epoch (informational; not reproducible).
    pub seconds: f64,
}

/// One row per epoch; the source for accuracy-curve plots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,train_acc,val_loss,val_acc,seconds")?;
        for (i, e) in self.epochs.iter().enumerate() {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6},{:.3}",
                i + 1,
                e.train_loss,
                e.train_acc,
                e.val_loss,
                e.val_acc,
                e.seconds
            )?;
        }
        Ok(())
    }

    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_acc)
    }
}

/// Trains a freshly initialized model on the manifest's train split and
/// tracks the validation split. Deterministic for a fixed
/// `(manifest, experiment, cfg)`: weight init, epoch shuffles and batch
/// order all derive from `cfg.seed`.
pub fn train(
    spec: &ModelSpec,
    manifest: &DatasetManifest,
    experiment: &ExperimentSpec,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    if cfg.epochs == 0 {
        return Err(TrainError::NoEpochs);
    }
    let train_set = manifest.load_split(experiment, Split::Train)?;
    let val_set = manifest.load_split(experiment, Split::Val)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit { split: Split::Train, experiment: experiment.id.name() });
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit { split: Split::Val, experiment: experiment.id.name() });
    }

    let mut model = Model::init(*spec, crate::seeds::derive(cfg.seed, crate::seeds::stream::WEIGHT_INIT, 0))?;
    let mut state = AdamState::new(&model.tensors(), AdamHyper::with_lr(cfg.lr));
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(
            cfg.seed,
            crate::seeds::stream::EPOCH_SHUFFLE,
            epoch as u64,
        ));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = train_set.batch(chunk)?;
            let (probs, cache) = model.forward(&batch)?;
            let (_, d_prob) = bce_loss(&probs, &labels)?;
            let grads = model.backward(&cache, &d_prob)?;
            adam_step(&mut model.tensors_mut(), &grads.tensors(), &mut state)?;
        }
        let (train_loss, train_acc) = evaluate(&model, &train_set, cfg.batch_size)?;
        let (val_loss, val_acc) = evaluate(&model, &val_set, cfg.batch_size)?;
        report.epochs.push(EpochStats {
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, report))
}

/// Mean loss and accuracy over a labeled set; a probability of at least 0.5
/// predicts class 1.
pub fn evaluate(model: &Model, set: &LabeledSet, batch_size: usize) -> Result<(f64, f64), TrainError> {
    if set.is_empty() {
        return Ok((0.0, 0.0));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = set.batch(chunk)?;
        let probs = model.predict(&batch)?;
        let (batch_loss, _) = bce_loss(&probs, &labels)?;
        loss_sum += batch_loss as f64 * chunk.len() as f64;
        for (&p, &y) in probs.data().iter().zip(labels.data()) {
            let predicted = p >= 0.5;
            if predicted == (y == 1.0) {
                correct += 1;
            }
        }
    }
    Ok((loss_sum / set.len() as f64, correct as f64 / set.len() as f64))
}

/// Per-image probabilities over a whole set, in index order.
pub fn predict_set(model: &Model, set: &LabeledSet, batch_size: usize) -> Result<Vec<f32>, TrainError> {
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut probs = Vec::with_capacity(set.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, _) = set.batch(chunk)?;
        probs.extend_from_slice(model.predict(&batch)?.data());
    }
    Ok(probs)
}

/// Stacks loose images into a B×1×H×W batch.
pub fn images_to_batch(images: &[&[f32]], height: usize, width: usize) -> Result<Tensor, TensorError> {
    let mut data = Vec::with_capacity(images.len() * height * width);
    for img in images {
        if img.len() != height * width {
            return Err(TensorError::LengthMismatch {
                got: img.len(),
                expected: height * width,
                shape: vec![1, height, width],
            });
        }
        data.extend_from_slice(img);
    }
    Tensor::from_vec(&[images.len(), 1, height, width], data)
}
