//! Evaluate a freshly trained classifier: confusion matrix, per-class
//! precision/recall/F1/AUC, micro and macro averages, and ROC curves.
//!
//! Run with: cargo run --example classifier_report

use bamkit::classifier::evaluate_classifier;
use bamkit::cnn::{train, Checkpoint, ModelConfig, TrainConfig};
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
    train(&mut ckpt, &train_set, &val_set, &train_cfg)?;
    let report = evaluate_classifier(&ckpt, &val_set)?;

    println!("samples: {}   accuracy: {:.4}\n", report.samples, report.accuracy);
    println!("confusion matrix (rows = true, cols = predicted):");
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>4}")).collect();
        println!("  {}", cells.join(" "));
    }
    println!("\nclass      support  precision  recall     f1         auc");
    for c in &report.per_class {
        println!(
            "{:<10} {:>7}  {:>9}  {:>9}  {:>9}  {:>9}",
            c.class, c.support, c.precision, c.recall, c.f1, c.auc
        );
    }
    println!(
        "\nmicro: precision {} recall {} f1 {} (equal to accuracy by construction)",
        report.micro.precision, report.micro.recall, report.micro.f1
    );
    println!(
        "macro: precision {} recall {} f1 {}",
        report.macro_avg.precision, report.macro_avg.recall, report.macro_avg.f1
    );
    println!("micro AUC {}   macro AUC {}", report.micro_auc, report.macro_auc);
    for (class, curve) in report.roc.iter().enumerate() {
        println!("class {class}: {} ROC points, AUC {}", curve.points.len(), curve.auc);
    }
    Ok(())
}
