//! Fit a 1-D Gaussian mixture to heatmap values, derive threshold
//! candidates from where neighboring component densities cross, and pick
//! the candidate whose mask best matches a reference.
//!
//! Run with: cargo run --example gmm_thresholds

use bamkit::gradcam::Heatmap;
use bamkit::mask::BinaryMask;
use bamkit::segment::{
    component_intersections, fit_gmm_em, iou, mask_at_threshold, postprocess,
    select_best_threshold,
};

fn main() -> bamkit::Result<()> {
    // A synthetic bimodal heatmap: dim background around 0.2, bright
    // square region around 0.8, plus deterministic jitter for spread.
    let side = 40;
    let mut data = vec![0.0; side * side];
    let mut reference = BinaryMask::zeros(side, side);
    for y in 0..side {
        for x in 0..side {
            let inside = (10..30).contains(&y) && (12..32).contains(&x);
            let jitter = ((x * 13 + y * 7) % 17) as f64 / 17.0 - 0.5;
            data[y * side + x] = if inside { 0.8 } else { 0.2 } + 0.08 * jitter;
            if inside {
                reference.set(y, x, true);
            }
        }
    }
    let heat = Heatmap::new(side, side, data);

    let fit = fit_gmm_em(heat.data(), 2, 1, 500, 1e-6)?;
    println!("fitted mixture ({} components):", fit.k());
    for i in 0..fit.k() {
        println!(
            "  weight {:.3}  mean {:.3}  std {:.3}",
            fit.weights[i],
            fit.means[i],
            fit.variances[i].sqrt()
        );
    }
    println!(
        "converged after {} EM iterations (final log-likelihood {:.2})",
        fit.iterations, fit.final_ll
    );

    let candidates = component_intersections(&fit);
    println!("\nthreshold candidates (density crossings between neighbors):");
    for c in &candidates.candidates {
        let mask = mask_at_threshold(&heat, c.t);
        println!(
            "  t = {:.4} ({}) -> IOU {:.4}",
            c.t,
            if c.from_intersection { "crossing" } else { "midpoint" },
            iou(&mask, &reference)?
        );
    }

    let (best_t, best_mask) = select_best_threshold(&heat, &candidates, &reference)?;
    let cleaned = postprocess(&best_mask, 0.10);
    println!(
        "\nselected t = {best_t:.4}; mask {} px, {} px after small-component filtering, IOU {:.4}",
        best_mask.area(),
        cleaned.area(),
        iou(&cleaned, &reference)?
    );
    Ok(())
}
