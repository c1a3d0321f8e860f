//! Compact convolutional classifier with tapped activations.
//!
//! Three same-padding conv blocks (conv, ReLU, 2x2 max-pool) feed one
//! dense layer. The first block's activation is tapped as `A1` at full
//! input resolution; the last block's activation is tapped as `A_last`
//! before its pool. Training runs Adam over mini-batches with a
//! reduce-on-plateau learning-rate rule; checkpoints store every
//! parameter as a tensor container next to a JSON manifest.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, NodeId, Tape};
use crate::error::{Error, Result};
use crate::pipeline::write_atomic;
use crate::tensor::{DType, Tensor};

pub const TAP_FIRST: &str = "A1";
pub const TAP_LAST: &str = "A_last";

/// Network shape. `conv_channels[0]` is the high-resolution tapped layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub dtype: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            input_channels: 3,
            conv_channels: vec![16, 24, 32],
            kernel_size: 3,
            pool_size: 2,
            num_classes: 4,
            dropout_rate: 0.3,
            dtype: DType::F32,
        }
    }
}

impl ModelConfig {
    pub fn first_layer_channels(&self) -> usize {
        self.conv_channels[0]
    }

    /// Spatial side length after all pools, and the flattened feature
    /// count entering the dense layer.
    pub fn feature_dims(&self) -> (usize, usize) {
        let side = self.input_size / self.pool_size.pow(self.conv_channels.len() as u32);
        (side, side * side * *self.conv_channels.last().unwrap())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::InvalidArgument {
            op: "model config",
            detail,
        };
        if self.conv_channels.is_empty() {
            return Err(bad("need at least one conv block".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(bad(format!(
                "kernel size {} is not odd, same-padding needs odd kernels",
                self.kernel_size
            )));
        }
        if self.pool_size == 0 {
            return Err(bad("pool size must be positive".into()));
        }
        let shrink = self.pool_size.pow(self.conv_channels.len() as u32);
        if self.input_size == 0 || self.input_size % shrink != 0 {
            return Err(bad(format!(
                "input size {} not divisible by total pool factor {shrink}",
                self.input_size
            )));
        }
        if self.num_classes < 2 {
            return Err(bad("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(bad(format!("dropout rate {} outside [0,1)", self.dropout_rate)));
        }
        if self.input_channels == 0 {
            return Err(bad("input channels must be positive".into()));
        }
        Ok(())
    }
}

/// Training bookkeeping carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs_trained: usize,
    pub final_val_accuracy: Option<f64>,
}

/// Model parameters plus the config and metadata needed to rebuild them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    meta: CheckpointMeta,
    params: BTreeMap<String, String>,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64, dtype: DType) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_f64_vec(shape, data, dtype)
}

impl Checkpoint {
    /// Fresh parameters: scaled normal conv and dense weights, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Checkpoint> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let k = config.kernel_size;
        let mut c_in = config.input_channels;
        for (i, &c_out) in config.conv_channels.iter().enumerate() {
            let std = (2.0 / (c_in * k * k) as f64).sqrt();
            params.insert(
                format!("conv{}.weight", i + 1),
                normal_tensor(&mut rng, &[c_out, c_in, k, k], std, config.dtype),
            );
            params.insert(
                format!("conv{}.bias", i + 1),
                Tensor::zeros(&[c_out], config.dtype),
            );
            c_in = c_out;
        }
        let (_, flat) = config.feature_dims();
        let std = (2.0 / flat as f64).sqrt();
        params.insert(
            "fc.weight".to_string(),
            normal_tensor(&mut rng, &[config.num_classes, flat], std, config.dtype),
        );
        params.insert(
            "fc.bias".to_string(),
            Tensor::zeros(&[config.num_classes], config.dtype),
        );
        Ok(Checkpoint {
            config,
            params,
            meta: CheckpointMeta {
                seed,
                epochs_trained: 0,
                final_val_accuracy: None,
            },
        })
    }

    /// Write `manifest.json` plus one tensor container per parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut index = BTreeMap::new();
        for (name, tensor) in &self.params {
            let rel = format!("params/{name}.tnsr");
            tensor.save_tnsr(&dir.join(&rel))?;
            index.insert(name.clone(), rel);
        }
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            meta: self.meta.clone(),
            params: index,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|source| Error::InputIo {
            path: path.clone(),
            source,
        })?;
        let manifest: CheckpointManifest = serde_json::from_slice(&bytes)?;
        manifest.config.validate()?;
        let mut params = BTreeMap::new();
        for (name, rel) in manifest.params {
            params.insert(name, Tensor::load_tnsr(&dir.join(rel))?);
        }
        Ok(Checkpoint {
            config: manifest.config,
            params,
            meta: manifest.meta,
        })
    }
}

struct ForwardPass {
    tape: Tape,
    logits: NodeId,
}

fn leaf(tape: &mut Tape, ckpt: &Checkpoint, name: &str) -> NodeId {
    tape.leaf(name, ckpt.params[name].clone())
}

/// Record the whole network on a fresh tape. Dropout runs only when a
/// generator is supplied (training); taps and the activation probe are
/// optional so the hot training path skips them.
fn build_forward(
    ckpt: &Checkpoint,
    image: &Tensor,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    with_taps: bool,
    probe: Option<(&[usize], f64)>,
) -> Result<ForwardPass> {
    let cfg = &ckpt.config;
    let want = [cfg.input_channels, cfg.input_size, cfg.input_size];
    if image.shape() != want {
        return Err(Error::ShapeMismatch {
            op: "forward",
            detail: format!("image shape {:?}, model expects {want:?}", image.shape()),
        });
    }
    let mut tape = Tape::new();
    let img = if image.dtype() == cfg.dtype {
        image.clone()
    } else {
        image.cast(cfg.dtype)
    };
    let mut x = tape.constant(img);
    let pad = cfg.kernel_size / 2;
    let last = cfg.conv_channels.len() - 1;
    for i in 0..cfg.conv_channels.len() {
        let w = leaf(&mut tape, ckpt, &format!("conv{}.weight", i + 1));
        let b = leaf(&mut tape, ckpt, &format!("conv{}.bias", i + 1));
        x = tape.conv2d(x, w, b, 1, pad)?;
        x = tape.relu(x);
        if i == last {
            if let Some((indices, delta)) = probe {
                x = tape.offset(x, indices, delta)?;
            }
        }
        if with_taps {
            if i == 0 {
                tape.tap(TAP_FIRST, x);
            }
            if i == last {
                tape.tap(TAP_LAST, x);
            }
        }
        x = tape.maxpool2d(x, cfg.pool_size, cfg.pool_size)?;
    }
    let (_, flat) = cfg.feature_dims();
    x = tape.reshape(x, &[flat])?;
    if let Some(rng) = dropout_rng.as_deref_mut() {
        if cfg.dropout_rate > 0.0 {
            x = tape.dropout(x, cfg.dropout_rate, rng);
        }
    }
    let w = leaf(&mut tape, ckpt, "fc.weight");
    let b = leaf(&mut tape, ckpt, "fc.bias");
    let logits = tape.dense(x, w, b)?;
    Ok(ForwardPass { tape, logits })
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class logits in inference mode (no dropout).
pub fn predict_logits(ckpt: &Checkpoint, image: &Tensor) -> Result<Vec<f64>> {
    let pass = build_forward(ckpt, image, None, false, None)?;
    Ok(pass.tape.value(pass.logits).to_f64_vec())
}

/// Predicted class label, ties resolved to the lowest index.
pub fn predict(ckpt: &Checkpoint, image: &Tensor) -> Result<usize> {
    Ok(argmax(&predict_logits(ckpt, image)?))
}

/// Everything the saliency stages need from one inference pass.
#[derive(Debug, Clone)]
pub struct TapsOutput {
    pub logits: Vec<f64>,
    pub predicted: usize,
    pub first_activation: Tensor,
    pub last_activation: Tensor,
    /// Gradient of the predicted class's pre-softmax logit with respect
    /// to the last conv activation.
    pub last_gradient: Tensor,
}

/// Inference pass exposing the tapped activations and the gradient of
/// the winning logit (not the softmax probability) at the last conv.
pub fn forward_with_taps(ckpt: &Checkpoint, image: &Tensor) -> Result<TapsOutput> {
    let mut pass = build_forward(ckpt, image, None, true, None)?;
    let logits = pass.tape.value(pass.logits).to_f64_vec();
    let predicted = argmax(&logits);
    let score = pass.tape.select(pass.logits, predicted)?;
    let mut grads = pass.tape.backward(score)?;
    let first_activation = pass
        .tape
        .tap_value(TAP_FIRST)
        .expect("first conv tap recorded")
        .clone();
    let last_activation = pass
        .tape
        .tap_value(TAP_LAST)
        .expect("last conv tap recorded")
        .clone();
    let last_gradient = grads.remove(TAP_LAST).expect("tap gradient present");
    Ok(TapsOutput {
        logits,
        predicted,
        first_activation,
        last_activation,
        last_gradient,
    })
}

/// Class logit with a constant added to chosen cells of the last conv
/// activation, for finite-difference probes of `last_gradient`.
pub fn logit_with_activation_offset(
    ckpt: &Checkpoint,
    image: &Tensor,
    class: usize,
    indices: &[usize],
    delta: f64,
) -> Result<f64> {
    if class >= ckpt.config.num_classes {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: ckpt.config.num_classes,
        });
    }
    let pass = build_forward(ckpt, image, None, false, Some((indices, delta)))?;
    Ok(pass.tape.value(pass.logits).at(class))
}

/// Halve-on-plateau learning-rate rule: after `patience` consecutive
/// observations without a new best value, emit the decay factor once
/// and start counting again.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    patience: usize,
    factor: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        PlateauScheduler {
            patience,
            factor,
            best: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, value: f64) -> Option<f64> {
        if value > self.best {
            self.best = value;
            self.stale = 0;
            return None;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            return Some(self.factor);
        }
        None
    }
}

/// Training hyperparameters; `seed` drives shuffling and dropout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub seed: u64,
    /// Stop once validation accuracy reaches this value.
    pub target_val_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.001,
            batch_size: 16,
            plateau_patience: 5,
            plateau_factor: 0.5,
            seed: 1,
            target_val_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Fraction of samples whose predicted class matches the label.
pub fn accuracy(ckpt: &Checkpoint, set: &[(Tensor, usize)]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyInput { op: "accuracy" });
    }
    let mut correct = 0usize;
    for (image, label) in set {
        if predict(ckpt, image)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

fn accumulate(sum: &mut BTreeMap<String, Vec<f64>>, grads: &BTreeMap<String, Tensor>) {
    for (name, grad) in grads {
        let entry = sum
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (s, v) in entry.iter_mut().zip(grad.to_f64_vec()) {
            *s += v;
        }
    }
}

/// Mini-batch Adam training with per-epoch validation. Gradients within
/// a batch are averaged; the learning rate halves when validation
/// accuracy plateaus; a non-finite loss aborts with a structured error.
pub fn train(
    ckpt: &mut Checkpoint,
    train_set: &[(Tensor, usize)],
    val_set: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput { op: "train" });
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument {
            op: "train",
            detail: "batch size must be positive".into(),
        });
    }
    let cast = |set: &[(Tensor, usize)]| -> Vec<(Tensor, usize)> {
        set.iter()
            .map(|(t, l)| (t.cast(ckpt.config.dtype), *l))
            .collect()
    };
    let train_set = cast(train_set);
    let val_set = cast(val_set);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut history = TrainingHistory::default();
    let mut adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new();
    let mut scheduler = PlateauScheduler::new(cfg.plateau_patience, cfg.plateau_factor);

    for epoch in 1..=cfg.epochs {
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64) << 17);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_sum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &i in batch {
                let (image, label) = &train_set[i];
                let mut pass = build_forward(ckpt, image, Some(&mut dropout_rng), false, None)?;
                let probs = pass.tape.softmax(pass.logits)?;
                let loss = pass.tape.cross_entropy(probs, *label)?;
                let value = pass.tape.value(loss).at(0);
                if !value.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                loss_sum += value;
                let grads = pass.tape.backward(loss)?;
                accumulate(&mut grad_sum, &grads);
            }
            let scale = 1.0 / batch.len() as f64;
            let averaged: BTreeMap<String, Tensor> = grad_sum
                .into_iter()
                .map(|(name, mut v)| {
                    for x in v.iter_mut() {
                        *x *= scale;
                    }
                    let shape = ckpt.params[&name].shape().to_vec();
                    (name, Tensor::from_f64_vec(&shape, v, ckpt.config.dtype))
                })
                .collect();
            adam_step(&mut ckpt.params, &averaged, &mut adam, &adam_cfg)?;
        }
        let val_accuracy = accuracy(ckpt, &val_set)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
            lr: adam_cfg.lr,
        });
        ckpt.meta.epochs_trained += 1;
        ckpt.meta.final_val_accuracy = Some(val_accuracy);
        if let Some(target) = cfg.target_val_accuracy {
            if val_accuracy >= target {
                history.stopped_early = true;
                break;
            }
        }
        if let Some(factor) = scheduler.observe(val_accuracy) {
            adam_cfg.lr *= factor;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests;
