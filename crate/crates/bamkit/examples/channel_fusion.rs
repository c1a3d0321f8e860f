//! Fuse first-layer activation channels by greedy rank-correlation search
//! and compare against the exhaustive small-subset optimum.
//!
//! The first conv layer keeps full image resolution, so a fused mean of
//! well-chosen channels is a high-resolution stand-in for the coarse
//! class-activation heatmap it is matched against.
//!
//! Run with: cargo run --example channel_fusion

use bamkit::bam::{bam_heatmap, exhaustive_fuse, greedy_fuse, spearman_rho, ChannelStack};
use bamkit::cnn::{forward_with_taps, train, Checkpoint, ModelConfig, TrainConfig};
use bamkit::gradcam::gradcam;
use bamkit::synth::{generate_dataset, image_to_tensor, SyntheticSpec};
use bamkit::tensor::Tensor;

fn main() -> bamkit::Result<()> {
    let mut spec = SyntheticSpec::default();
    spec.image_size = 32;
    spec.radius_range = (0.12, 0.22);
    let model = ModelConfig {
        input_size: 32,
        conv_channels: vec![8, 12],
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (train_samples, val_samples) = generate_dataset(&spec, 48, 16);
    let to_set = |samples: &[bamkit::synth::Sample]| -> Vec<(Tensor, usize)> {
        samples
            .iter()
            .map(|s| (image_to_tensor(&s.image, model.dtype), s.label))
            .collect()
    };
    let mut ckpt = Checkpoint::init(model.clone(), train_cfg.seed)?;
    train(&mut ckpt, &to_set(&train_samples), &to_set(&val_samples), &train_cfg)?;

    let sample = &val_samples[0];
    let taps = forward_with_taps(&ckpt, &image_to_tensor(&sample.image, model.dtype))?;
    let reference = gradcam(
        &taps.last_activation,
        &taps.last_gradient,
        model.input_size,
        model.input_size,
    )?;

    let stack = ChannelStack::from_activation(&taps.first_activation)?;
    println!(
        "stack: {} channels at {}x{}",
        stack.num_channels(),
        stack.height(),
        stack.width()
    );

    let trace = greedy_fuse(&stack, &reference)?;
    println!("\ngreedy selection (channel, correlation after adding it):");
    for (step, (ch, rho)) in trace.selected.iter().zip(&trace.correlations).enumerate() {
        let flip = if trace.inverted[step] { " (inverted)" } else { "" };
        println!("  step {}: channel {ch}{flip} -> rho {rho:.4}", step + 1);
    }
    println!("greedy final rho: {:.4}", trace.final_rho());

    let (best_subset, best_rho) = exhaustive_fuse(&stack, &reference, 3)?;
    println!("exhaustive best subset of size <= 3: {best_subset:?} -> rho {best_rho:.4}");

    let fused = bam_heatmap(&trace);
    let check = spearman_rho(fused.data(), reference.data())?;
    println!("fused heatmap vs reference, recomputed rho: {check:.4}");
    Ok(())
}
