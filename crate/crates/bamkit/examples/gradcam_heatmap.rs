//! Compute a class-activation heatmap for one image and binarize it.
//!
//! The heatmap weights each last-layer activation channel by the spatial
//! mean of the winning logit's gradient, keeps the positive part, then
//! upsamples to image resolution and normalizes to [0, 1].
//!
//! Run with: cargo run --example gradcam_heatmap

use std::path::PathBuf;

use bamkit::cnn::{forward_with_taps, train, Checkpoint, ModelConfig, TrainConfig};
use bamkit::gradcam::{binarize, channel_importance, gradcam, DEFAULT_HEATMAP_THRESHOLD};
use bamkit::raster::{heatmap_to_gray, mask_to_gray, write_png_gray8, write_png_rgb8};
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
    println!(
        "label {} predicted {} (logits {:?})",
        sample.label,
        taps.predicted,
        taps.logits.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
    );

    let alphas = channel_importance(&taps.last_gradient)?;
    println!("channel importance weights: {} channels", alphas.len());
    let strongest = alphas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap();
    println!("  strongest channel {} with weight {:.5}", strongest.0, strongest.1);

    let heat = gradcam(
        &taps.last_activation,
        &taps.last_gradient,
        model.input_size,
        model.input_size,
    )?;
    let mask = binarize(&heat, DEFAULT_HEATMAP_THRESHOLD);
    println!(
        "heatmap {}x{}, mask covers {} of {} pixels at threshold {}",
        heat.height(),
        heat.width(),
        mask.area(),
        model.input_size * model.input_size,
        DEFAULT_HEATMAP_THRESHOLD
    );

    let out = PathBuf::from("target/examples/gradcam_heatmap");
    write_png_rgb8(&out.join("image.png"), &sample.image)?;
    write_png_gray8(&out.join("heatmap.png"), &heatmap_to_gray(&heat))?;
    write_png_gray8(&out.join("mask.png"), &mask_to_gray(&mask))?;
    println!("artifacts written under {}", out.display());
    Ok(())
}
