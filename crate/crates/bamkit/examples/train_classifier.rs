//! Train the small CNN on a synthetic dataset and save a checkpoint.
//!
//! Training uses Adam with cross-entropy loss, per-epoch validation, a
//! plateau-halving learning-rate schedule, and is bit-reproducible for a
//! fixed seed.
//!
//! Run with: cargo run --example train_classifier

use std::path::PathBuf;

use bamkit::cnn::{train, Checkpoint, ModelConfig, TrainConfig};
use bamkit::synth::{generate_dataset, image_to_tensor, SyntheticSpec};
use bamkit::tensor::Tensor;

fn main() -> bamkit::Result<()> {
    // scaled-down setup so the example finishes in well under a minute
    let mut spec = SyntheticSpec::default();
    spec.image_size = 32;
    spec.radius_range = (0.12, 0.22);
    let model = ModelConfig {
        input_size: 32,
        conv_channels: vec![8, 12],
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: 8,
        batch_size: 8,
        target_val_accuracy: Some(0.90),
        ..TrainConfig::default()
    };

    let (train_samples, val_samples) = generate_dataset(&spec, 64, 32);
    let to_set = |samples: &[bamkit::synth::Sample]| -> Vec<(Tensor, usize)> {
        samples
            .iter()
            .map(|s| (image_to_tensor(&s.image, model.dtype), s.label))
            .collect()
    };
    let train_set = to_set(&train_samples);
    let val_set = to_set(&val_samples);

    let mut ckpt = Checkpoint::init(model, train_cfg.seed)?;
    let history = train(&mut ckpt, &train_set, &val_set, &train_cfg)?;

    println!("epoch  train-loss  val-accuracy      lr");
    for e in &history.epochs {
        println!(
            "{:>5}  {:>10.4}  {:>12.4}  {:>6.4}",
            e.epoch, e.train_loss, e.val_accuracy, e.lr
        );
    }
    if history.stopped_early {
        println!("stopped early: validation target reached");
    }

    let out = PathBuf::from("target/examples/train_classifier/checkpoint");
    ckpt.save(&out)?;
    println!("checkpoint saved to {}", out.display());
    Ok(())
}
