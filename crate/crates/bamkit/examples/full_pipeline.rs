//! Run every pipeline stage on a scaled-down configuration: dataset
//! generation, training, classifier evaluation, saliency and segmentation
//! artifacts, scan-benchmark preparation, and the final metric table.
//!
//! Run with: cargo run --example full_pipeline

use std::path::PathBuf;

use bamkit::cnn::TrainConfig;
use bamkit::pipeline::{cmd_pipeline, Layout, PipelineConfig};

fn main() -> bamkit::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.n_train = 24;
    cfg.n_val = 8;
    cfg.synth.image_size = 32;
    cfg.synth.radius_range = (0.12, 0.22);
    cfg.model.input_size = 32;
    cfg.model.conv_channels = vec![8, 12];
    cfg.train = TrainConfig {
        epochs: 6,
        batch_size: 8,
        target_val_accuracy: Some(0.95),
        ..TrainConfig::default()
    };
    cfg.validate()?;

    let root = PathBuf::from("target/examples/full_pipeline");
    let manifests = cmd_pipeline(&cfg, &root, 2)?;

    println!("stage     files  wall-ms");
    for m in &manifests {
        println!("{:<9} {:>5}  {:>7}", m.command, m.outputs.len(), m.wall_ms);
    }

    let layout = Layout::new(&root);
    println!("\nsegmentation metrics (pooled counts):");
    print!("{}", std::fs::read_to_string(layout.segmentation_table())?);
    println!("\nall artifacts under {}", root.display());
    Ok(())
}
