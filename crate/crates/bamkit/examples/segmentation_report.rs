//! Pixel-metric evaluation of predicted masks against references:
//! accuracy, sensitivity, specificity, and Jaccard, aggregated both as a
//! per-image mean and from pooled confusion counts.
//!
//! Sensitivity is undefined when a reference has no positive pixels;
//! undefined values print as "--" and are excluded from means with an
//! explicit exclusion count.
//!
//! Run with: cargo run --example segmentation_report

use bamkit::evaluation::{batch_report, format_table, metrics, confusion_counts, AggregationMode};
use bamkit::mask::BinaryMask;

fn disk(side: usize, cy: f64, cx: f64, r: f64) -> BinaryMask {
    let mut m = BinaryMask::zeros(side, side);
    for y in 0..side {
        for x in 0..side {
            if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                m.set(y, x, true);
            }
        }
    }
    m
}

fn main() -> bamkit::Result<()> {
    let side = 32;
    // predictions drift off-center by varying amounts; one reference is
    // empty to demonstrate the undefined-sensitivity marker
    let pairs: Vec<(BinaryMask, BinaryMask)> = vec![
        (disk(side, 16.0, 16.0, 8.0), disk(side, 16.0, 16.0, 8.0)),
        (disk(side, 14.0, 17.0, 8.0), disk(side, 16.0, 16.0, 8.0)),
        (disk(side, 10.0, 20.0, 7.0), disk(side, 16.0, 16.0, 9.0)),
        (disk(side, 16.0, 16.0, 5.0), BinaryMask::zeros(side, side)),
    ];

    println!("single-pair metrics (prediction 2 vs its reference):");
    let counts = confusion_counts(&pairs[1].0, &pairs[1].1)?;
    let m = metrics(&counts);
    println!(
        "  tp {} fp {} tn {} fn {} -> accuracy {} sensitivity {} specificity {} jaccard {}",
        counts.true_pos,
        counts.false_pos,
        counts.true_neg,
        counts.false_neg,
        m.accuracy,
        m.sensitivity,
        m.specificity,
        m.jaccard
    );

    let mean_report = batch_report("disks (mean)", &pairs, AggregationMode::PerImageMean)?;
    let pooled_report = batch_report("disks (pooled)", &pairs, AggregationMode::PooledCounts)?;
    println!("\nper-image mean vs pooled-count aggregation:");
    print!("{}", format_table(&[mean_report.clone(), pooled_report]));
    println!(
        "\nundefined sensitivities excluded from the mean: {}",
        mean_report.per_image_mean.undefined_excluded.sensitivity
    );
    Ok(())
}
