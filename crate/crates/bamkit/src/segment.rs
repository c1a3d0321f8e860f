//! Heatmap binarization via Gaussian-mixture intersection thresholds.
//!
//! A 1-D GMM is fitted to the heatmap's pixel values; the points where
//! adjacent weighted components intersect become threshold candidates, and
//! the candidate whose mask best overlaps the class activation mask (by
//! IOU) wins. Small connected components are then filtered out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcam::{binarize, Heatmap};
use crate::mask::{connected_components, BinaryMask};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_COMPONENTS: usize = 2;
pub const DEFAULT_EM_MAX_ITER: usize = 500;
pub const DEFAULT_EM_TOL: f64 = 1e-6;
/// EM never sees more than this many pixels; larger inputs are subsampled
/// with a seeded generator.
pub const EM_SAMPLE_CAP: usize = 50_000;
pub const DEFAULT_MIN_AREA_FRACTION: f64 = 0.10;

/// Fitted 1-D Gaussian mixture, components sorted by mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub final_ll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ll_history: Vec<f64>,
}

impl GmmFit {
    pub fn k(&self) -> usize {
        self.means.len()
    }
}

/// One candidate threshold and the adjacent component pair it came from.
/// `from_intersection` is false when the density equality had no root
/// between the means and the midpoint stood in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdCandidate {
    pub t: f64,
    pub pair: (usize, usize),
    pub from_intersection: bool,
}

/// Candidates sorted ascending by threshold value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ThresholdCandidates {
    pub candidates: Vec<ThresholdCandidate>,
}

impl ThresholdCandidates {
    pub fn values(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.t).collect()
    }
}

pub fn gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-d * d / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

fn log_gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - d * d / (2.0 * variance)
}

/// Expectation-maximization fit with deterministic initialization:
/// quantile-spread means, uniform weights, pooled variance. Stops when the
/// log-likelihood gain drops below `tol` or after `max_iter` iterations.
pub fn fit_gmm_em(
    pixels: &[f64],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidArgument {
            op: "fit_gmm_em",
            detail: "component count must be at least 1".to_string(),
        });
    }
    if pixels.is_empty() {
        return Err(Error::EmptyInput { op: "fit_gmm_em" });
    }

    let mut sample: Vec<f64> = if pixels.len() > EM_SAMPLE_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, pixels.len(), EM_SAMPLE_CAP)
            .iter()
            .map(|i| pixels[i])
            .collect()
    } else {
        pixels.to_vec()
    };
    sample.sort_by(f64::total_cmp);

    let mut distinct = 1;
    for pair in sample.windows(2) {
        if pair[1] != pair[0] {
            distinct += 1;
        }
    }
    if distinct < k {
        return Err(Error::TooFewDistinctValues { distinct, k });
    }

    let n = sample.len();
    let nf = n as f64;
    let sample_mean = sample.iter().sum::<f64>() / nf;
    let pooled_var = (sample.iter().map(|&x| (x - sample_mean).powi(2)).sum::<f64>() / nf)
        .max(VARIANCE_FLOOR);

    let mut weights = vec![1.0 / k as f64; k];
    let mut means: Vec<f64> = (0..k)
        .map(|j| {
            let q = (j as f64 + 0.5) / k as f64;
            sample[((q * nf) as usize).min(n - 1)]
        })
        .collect();
    // Mass quantiles coincide when one value dominates the sample; equal
    // initial means get identical responsibilities and can never separate,
    // so spread the init over the distinct values instead.
    if means.windows(2).any(|w| w[1] <= w[0]) {
        let mut uniq: Vec<f64> = Vec::with_capacity(distinct);
        for &v in &sample {
            if uniq.last() != Some(&v) {
                uniq.push(v);
            }
        }
        let u = uniq.len();
        let mut prev = 0usize;
        means = (0..k)
            .map(|j| {
                let spread = ((j as f64 + 0.5) * u as f64 / k as f64) as usize;
                let idx = spread.max(if j == 0 { 0 } else { prev + 1 }).min(u - 1);
                prev = idx;
                uniq[idx]
            })
            .collect();
    }
    let mut variances = vec![pooled_var; k];

    let mut ll_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = vec![0.0; n * k];
    let mut log_dens = vec![f64::NEG_INFINITY; k];

    for _ in 0..max_iter {
        iterations += 1;

        // E step in log space; the variance floor keeps exponents finite.
        let mut ll = 0.0;
        for (i, &x) in sample.iter().enumerate() {
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                log_dens[j] = if weights[j] > 0.0 {
                    weights[j].ln() + log_gaussian_pdf(x, means[j], variances[j])
                } else {
                    f64::NEG_INFINITY
                };
                m = m.max(log_dens[j]);
            }
            let sum_exp: f64 = log_dens.iter().map(|&ld| (ld - m).exp()).sum();
            ll += m + sum_exp.ln();
            for j in 0..k {
                resp[i * k + j] = (log_dens[j] - m).exp() / sum_exp;
            }
        }
        let gain = ll - ll_history.last().copied().unwrap_or(f64::NEG_INFINITY);
        ll_history.push(ll);
        if gain < tol {
            converged = true;
            break;
        }

        // M step.
        for j in 0..k {
            let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nj <= 0.0 {
                weights[j] = 0.0;
                continue;
            }
            weights[j] = nj / nf;
            let mu = (0..n).map(|i| resp[i * k + j] * sample[i]).sum::<f64>() / nj;
            means[j] = mu;
            variances[j] = ((0..n)
                .map(|i| resp[i * k + j] * (sample[i] - mu).powi(2))
                .sum::<f64>()
                / nj)
                .max(VARIANCE_FLOOR);
        }
    }

    // Sort components by mean so adjacent pairs are meaningful downstream.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    let final_ll = ll_history.last().copied().unwrap_or(f64::NEG_INFINITY);
    Ok(GmmFit {
        weights: order.iter().map(|&j| weights[j]).collect(),
        means: order.iter().map(|&j| means[j]).collect(),
        variances: order.iter().map(|&j| variances[j]).collect(),
        final_ll,
        iterations,
        converged,
        ll_history,
    })
}

/// Thresholds where adjacent weighted component densities meet. The
/// density equality is quadratic in x (linear for equal variances); only
/// roots strictly between the two means count, with the midpoint as the
/// documented fallback.
pub fn component_intersections(fit: &GmmFit) -> ThresholdCandidates {
    let mut candidates = Vec::new();
    for a in 0..fit.k().saturating_sub(1) {
        let b = a + 1;
        let (mu_a, mu_b) = (fit.means[a], fit.means[b]);
        if mu_b - mu_a < 1e-12 {
            // Collapsed components have no meaningful crossing.
            continue;
        }
        let root = density_crossing(
            fit.weights[a],
            mu_a,
            fit.variances[a],
            fit.weights[b],
            mu_b,
            fit.variances[b],
        );
        let (t, from_intersection) = match root {
            Some(t) => (t, true),
            None => ((mu_a + mu_b) / 2.0, false),
        };
        candidates.push(ThresholdCandidate {
            t,
            pair: (a, b),
            from_intersection,
        });
    }
    candidates.sort_by(|x, y| x.t.total_cmp(&y.t));
    ThresholdCandidates { candidates }
}

/// Solve w_a N(x; mu_a, var_a) = w_b N(x; mu_b, var_b) for x strictly
/// inside (mu_a, mu_b); the smaller such root wins if both fall inside.
fn density_crossing(
    w_a: f64,
    mu_a: f64,
    var_a: f64,
    w_b: f64,
    mu_b: f64,
    var_b: f64,
) -> Option<f64> {
    if w_a <= 0.0 || w_b <= 0.0 {
        return None;
    }
    // Equating log densities gives: qa*x^2 + qb*x + qc = 0 with the
    // coefficients below (differences of the expanded quadratic forms).
    let qa = 1.0 / var_b - 1.0 / var_a;
    let qb = 2.0 * (mu_a / var_a - mu_b / var_b);
    let qc = mu_b * mu_b / var_b - mu_a * mu_a / var_a
        + 2.0 * (w_a / w_b).ln()
        + (var_b / var_a).ln();
    let inside = |x: f64| x > mu_a && x < mu_b;
    if qa.abs() < 1e-12 {
        if qb.abs() < 1e-300 {
            return None;
        }
        let x = -qc / qb;
        return inside(x).then_some(x);
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let mut roots = [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)];
    roots.sort_by(f64::total_cmp);
    roots.into_iter().find(|&x| inside(x))
}

/// Foreground where the heatmap value is at least `t`.
pub fn mask_at_threshold(h: &Heatmap, t: f64) -> BinaryMask {
    binarize(h, t)
}

/// Intersection over union; two empty masks count as identical (1.0).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch {
            op: "iou",
            detail: format!(
                "{}x{} vs {}x{}",
                a.height(),
                a.width(),
                b.height(),
                b.width()
            ),
        });
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x & y) as u64;
        union += (x | y) as u64;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Pick the candidate whose mask has the highest IOU against the class
/// activation mask; ties resolve to the smallest threshold.
pub fn select_best_threshold(
    h: &Heatmap,
    candidates: &ThresholdCandidates,
    gradcam_mask: &BinaryMask,
) -> Result<(f64, BinaryMask)> {
    if candidates.candidates.is_empty() {
        return Err(Error::CollapsedMixture);
    }
    let mut best: Option<(f64, BinaryMask, f64)> = None;
    for cand in &candidates.candidates {
        let mask = mask_at_threshold(h, cand.t);
        let score = iou(&mask, gradcam_mask)?;
        // Candidates are sorted ascending, so strict improvement keeps the
        // smallest threshold on ties.
        if best.as_ref().map_or(true, |&(_, _, s)| score > s) {
            best = Some((cand.t, mask, score));
        }
    }
    let (t, mask, _) = best.expect("nonempty candidates");
    Ok((t, mask))
}

/// Drop 8-connected components smaller than `min_area_fraction` times the
/// largest component's area.
pub fn postprocess(mask: &BinaryMask, min_area_fraction: f64) -> BinaryMask {
    let components = connected_components(mask);
    let largest = components.iter().map(|c| c.area()).max().unwrap_or(0);
    let cutoff = min_area_fraction * largest as f64;
    let mut out = BinaryMask::zeros(mask.height(), mask.width());
    let w = mask.width();
    for comp in &components {
        if comp.area() as f64 >= cutoff {
            for &i in &comp.pixels {
                out.set(i / w, i % w, true);
            }
        }
    }
    out
}

/// Knobs for the heatmap-to-mask chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub components: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub min_area_fraction: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            components: DEFAULT_COMPONENTS,
            em_max_iter: DEFAULT_EM_MAX_ITER,
            em_tol: DEFAULT_EM_TOL,
            min_area_fraction: DEFAULT_MIN_AREA_FRACTION,
        }
    }
}

/// Audit record of one segmentation: every candidate, its IOU against the
/// class activation mask, and the winner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub candidates: Vec<ThresholdCandidate>,
    pub ious: Vec<f64>,
    pub chosen_t: f64,
    pub chosen_iou: f64,
}

/// Result of segmenting one heatmap.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub fit: GmmFit,
    pub report: ThresholdReport,
    pub mask: BinaryMask,
}

/// Full chain: GMM fit on the heatmap pixels, intersection candidates,
/// IOU-based selection against `gradcam_mask`, then small-component
/// filtering.
pub fn segment_heatmap(
    h: &Heatmap,
    gradcam_mask: &BinaryMask,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<SegmentOutcome> {
    let fit = fit_gmm_em(h.data(), cfg.components, seed, cfg.em_max_iter, cfg.em_tol)?;
    let candidates = component_intersections(&fit);
    let (chosen_t, raw_mask) = select_best_threshold(h, &candidates, gradcam_mask)?;
    let ious = candidates
        .candidates
        .iter()
        .map(|c| iou(&mask_at_threshold(h, c.t), gradcam_mask))
        .collect::<Result<Vec<f64>>>()?;
    let chosen_iou = iou(&raw_mask, gradcam_mask)?;
    let mask = postprocess(&raw_mask, cfg.min_area_fraction);
    Ok(SegmentOutcome {
        fit,
        report: ThresholdReport {
            candidates: candidates.candidates,
            ious,
            chosen_t,
            chosen_iou,
        },
        mask,
    })
}

#[cfg(test)]
mod tests;
