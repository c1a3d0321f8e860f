use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::*;

fn bimodal_sample(rng: &mut StdRng, n: usize, lo: f64, hi: f64, sd: f64) -> Vec<f64> {
    let a = Normal::new(lo, sd).unwrap();
    let b = Normal::new(hi, sd).unwrap();
    (0..n)
        .map(|_| {
            let v = if rng.gen_bool(0.5) {
                a.sample(rng)
            } else {
                b.sample(rng)
            };
            v.clamp(0.0, 1.0)
        })
        .collect()
}

#[test]
fn single_component_fit_matches_sample_moments() {
    let mut rng = StdRng::seed_from_u64(50);
    let pixels: Vec<f64> = (0..500).map(|_| rng.gen_range(0.2..0.9)).collect();
    let fit = fit_gmm_em(&pixels, 1, 0, 200, 1e-9).unwrap();
    let mean = pixels.iter().sum::<f64>() / 500.0;
    let var = pixels.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / 500.0;
    assert!((fit.means[0] - mean).abs() < 1e-9);
    assert!((fit.variances[0] - var.max(VARIANCE_FLOOR)).abs() < 1e-9);
    assert!((fit.weights[0] - 1.0).abs() < 1e-12);
    assert_eq!(fit.k(), 1);
}

#[test]
fn variance_floor_applies_to_degenerate_data() {
    let pixels = vec![0.5, 0.5, 0.5, 0.5];
    let fit = fit_gmm_em(&pixels, 1, 0, 50, 1e-9).unwrap();
    assert_eq!(fit.variances[0], VARIANCE_FLOOR);
}

#[test]
fn recovers_well_separated_bimodal_means() {
    let mut rng = StdRng::seed_from_u64(51);
    let pixels = bimodal_sample(&mut rng, 4000, 0.2, 0.8, 0.05);
    let fit = fit_gmm_em(&pixels, 2, 7, DEFAULT_EM_MAX_ITER, DEFAULT_EM_TOL).unwrap();
    assert!((fit.means[0] - 0.2).abs() < 0.02, "low mean {}", fit.means[0]);
    assert!((fit.means[1] - 0.8).abs() < 0.02, "high mean {}", fit.means[1]);
    assert!(fit.converged);
    let t = component_intersections(&fit);
    assert_eq!(t.candidates.len(), 1);
    assert!((t.candidates[0].t - 0.5).abs() < 0.02, "t {}", t.candidates[0].t);
}

#[test]
fn log_likelihood_never_decreases() {
    let mut rng = StdRng::seed_from_u64(52);
    for trial in 0..5 {
        let pixels: Vec<f64> = (0..800).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fit = fit_gmm_em(&pixels, 3, trial, 200, 1e-9).unwrap();
        for pair in fit.ll_history.windows(2) {
            let slack = 1e-8 * pair[0].abs().max(1.0);
            assert!(pair[1] >= pair[0] - slack, "{} -> {}", pair[0], pair[1]);
        }
        let wsum: f64 = fit.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
        assert!(fit.weights.iter().all(|&w| w >= 0.0));
        assert!(fit.variances.iter().all(|&v| v >= VARIANCE_FLOOR));
        for pair in fit.means.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
    }
}

#[test]
fn rejects_fewer_distinct_values_than_components() {
    let pixels = vec![0.1, 0.1, 0.9, 0.9, 0.1];
    match fit_gmm_em(&pixels, 3, 0, 50, 1e-6) {
        Err(Error::TooFewDistinctValues { distinct, k }) => {
            assert_eq!(distinct, 2);
            assert_eq!(k, 3);
        }
        other => panic!("expected TooFewDistinctValues, got {other:?}"),
    }
}

#[test]
fn subsampling_is_deterministic() {
    let mut rng = StdRng::seed_from_u64(53);
    let pixels: Vec<f64> = (0..(EM_SAMPLE_CAP + 5000))
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let a = fit_gmm_em(&pixels, 2, 9, 40, 1e-6).unwrap();
    let b = fit_gmm_em(&pixels, 2, 9, 40, 1e-6).unwrap();
    assert_eq!(a.means, b.means);
    assert_eq!(a.ll_history, b.ll_history);
}

#[test]
fn symmetric_pair_intersects_at_midpoint() {
    let fit = GmmFit {
        weights: vec![0.5, 0.5],
        means: vec![0.2, 0.8],
        variances: vec![0.0025, 0.0025],
        final_ll: 0.0,
        iterations: 0,
        converged: true,
        ll_history: vec![],
    };
    let t = component_intersections(&fit);
    assert_eq!(t.candidates.len(), 1);
    assert!((t.candidates[0].t - 0.5).abs() < 1e-12);
    assert!(t.candidates[0].from_intersection);
    assert_eq!(t.candidates[0].pair, (0, 1));
}

#[test]
fn unequal_weights_shift_crossing_toward_lighter_component() {
    let fit = GmmFit {
        weights: vec![0.9, 0.1],
        means: vec![0.2, 0.8],
        variances: vec![0.0025, 0.0025],
        final_ll: 0.0,
        iterations: 0,
        converged: true,
        ll_history: vec![],
    };
    let t = component_intersections(&fit);
    let cand = &t.candidates[0];
    assert!(cand.t > 0.5, "t = {}", cand.t);
    assert!(cand.t < 0.8);
    let residual = (0.9 * gaussian_pdf(cand.t, 0.2, 0.0025)
        - 0.1 * gaussian_pdf(cand.t, 0.8, 0.0025))
    .abs();
    assert!(residual < 1e-9, "residual {residual}");
}

#[test]
fn unequal_variances_crossing_satisfies_density_equality() {
    let fit = GmmFit {
        weights: vec![0.6, 0.4],
        means: vec![0.3, 0.75],
        variances: vec![0.01, 0.002],
        final_ll: 0.0,
        iterations: 0,
        converged: true,
        ll_history: vec![],
    };
    let t = component_intersections(&fit);
    let cand = &t.candidates[0];
    assert!(cand.from_intersection);
    assert!(cand.t > 0.3 && cand.t < 0.75);
    let residual = (0.6 * gaussian_pdf(cand.t, 0.3, 0.01)
        - 0.4 * gaussian_pdf(cand.t, 0.75, 0.002))
    .abs();
    assert!(residual < 1e-9);
}

#[test]
fn single_component_yields_no_candidates() {
    let fit = GmmFit {
        weights: vec![1.0],
        means: vec![0.5],
        variances: vec![0.01],
        final_ll: 0.0,
        iterations: 0,
        converged: true,
        ll_history: vec![],
    };
    assert!(component_intersections(&fit).candidates.is_empty());
}

#[test]
fn extreme_weight_ratio_falls_back_to_midpoint() {
    // The heavy component dominates everywhere between the means, so no
    // crossing exists inside the interval.
    let fit = GmmFit {
        weights: vec![1.0 - 1e-12, 1e-12],
        means: vec![0.4, 0.6],
        variances: vec![0.04, 0.04],
        final_ll: 0.0,
        iterations: 0,
        converged: true,
        ll_history: vec![],
    };
    let t = component_intersections(&fit);
    assert_eq!(t.candidates.len(), 1);
    assert!(!t.candidates[0].from_intersection);
    assert!((t.candidates[0].t - 0.5).abs() < 1e-12);
}

#[test]
fn threshold_masks_are_nested_and_cover_expected_fraction() {
    let n = 64;
    let ramp: Vec<f64> = (0..n * n).map(|i| i as f64 / (n * n - 1) as f64).collect();
    let h = Heatmap::new(n, n, ramp);
    let all = mask_at_threshold(&h, 0.0);
    assert_eq!(all.area(), n * n);
    let none = mask_at_threshold(&h, 1.0 + 1e-12);
    assert_eq!(none.area(), 0);
    let quarter = mask_at_threshold(&h, 0.25);
    let frac = quarter.area() as f64 / (n * n) as f64;
    assert!((frac - 0.75).abs() < 0.01);
    let half = mask_at_threshold(&h, 0.5);
    assert!(half.is_subset_of(&quarter));
}

#[test]
fn iou_matches_counting_oracle_on_random_masks() {
    let mut rng = StdRng::seed_from_u64(54);
    for _ in 0..50 {
        let mut a = BinaryMask::zeros(16, 16);
        let mut b = BinaryMask::zeros(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                a.set(y, x, rng.gen_bool(0.4));
                b.set(y, x, rng.gen_bool(0.4));
            }
        }
        let mut inter = 0.0;
        let mut uni = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                if a.get(y, x) && b.get(y, x) {
                    inter += 1.0;
                }
                if a.get(y, x) || b.get(y, x) {
                    uni += 1.0;
                }
            }
        }
        let want = if uni == 0.0 { 1.0 } else { inter / uni };
        assert_eq!(iou(&a, &b).unwrap(), want);
    }
}

#[test]
fn iou_edge_cases() {
    let a = BinaryMask::ones(4, 4);
    assert_eq!(iou(&a, &a).unwrap(), 1.0);
    let empty = BinaryMask::zeros(4, 4);
    assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    assert_eq!(iou(&a, &empty).unwrap(), 0.0);
    let mut left = BinaryMask::zeros(2, 4);
    left.set(0, 0, true);
    let mut right = BinaryMask::zeros(2, 4);
    right.set(1, 3, true);
    assert_eq!(iou(&left, &right).unwrap(), 0.0);
    assert!(iou(&a, &BinaryMask::zeros(3, 4)).is_err());
}

#[test]
fn best_threshold_reproducing_the_reference_wins() {
    let n = 8;
    let data: Vec<f64> = (0..n * n).map(|i| i as f64 / (n * n - 1) as f64).collect();
    let h = Heatmap::new(n, n, data);
    let reference = mask_at_threshold(&h, 0.6);
    let candidates = ThresholdCandidates {
        candidates: [0.3, 0.6, 0.9]
            .iter()
            .map(|&t| ThresholdCandidate {
                t,
                pair: (0, 1),
                from_intersection: true,
            })
            .collect(),
    };
    let (t, mask) = select_best_threshold(&h, &candidates, &reference).unwrap();
    assert_eq!(t, 0.6);
    assert_eq!(iou(&mask, &reference).unwrap(), 1.0);
}

#[test]
fn best_threshold_matches_scan_oracle_and_breaks_ties_low() {
    let mut rng = StdRng::seed_from_u64(55);
    for _ in 0..20 {
        let data: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let h = Heatmap::new(10, 10, data);
        let reference = mask_at_threshold(&h, 0.45);
        let ts = [0.2, 0.4, 0.5, 0.7];
        let candidates = ThresholdCandidates {
            candidates: ts
                .iter()
                .map(|&t| ThresholdCandidate {
                    t,
                    pair: (0, 1),
                    from_intersection: true,
                })
                .collect(),
        };
        let (chosen, _) = select_best_threshold(&h, &candidates, &reference).unwrap();
        let mut oracle_t = f64::NAN;
        let mut best = f64::NEG_INFINITY;
        for &t in &ts {
            let s = iou(&mask_at_threshold(&h, t), &reference).unwrap();
            if s > best {
                best = s;
                oracle_t = t;
            }
        }
        assert_eq!(chosen, oracle_t);
    }
}

#[test]
fn empty_candidates_is_an_error() {
    let h = Heatmap::new(2, 2, vec![0.0, 0.3, 0.6, 1.0]);
    let m = BinaryMask::zeros(2, 2);
    assert!(select_best_threshold(&h, &ThresholdCandidates::default(), &m).is_err());
}

#[test]
fn postprocess_removes_specks_and_keeps_blobs() {
    let mut mask = BinaryMask::zeros(16, 16);
    for y in 2..10 {
        for x in 2..10 {
            mask.set(y, x, true);
        }
    }
    mask.set(14, 14, true);
    let cleaned = postprocess(&mask, DEFAULT_MIN_AREA_FRACTION);
    assert!(!cleaned.get(14, 14));
    assert_eq!(cleaned.area(), 64);
    assert!(cleaned.is_subset_of(&mask));
}

#[test]
fn postprocess_on_empty_mask_is_empty() {
    let empty = BinaryMask::zeros(8, 8);
    assert_eq!(postprocess(&empty, 0.1).area(), 0);
}

#[test]
fn postprocess_properties_on_random_masks() {
    let mut rng = StdRng::seed_from_u64(56);
    for _ in 0..200 {
        let mut mask = BinaryMask::zeros(12, 12);
        for y in 0..12 {
            for x in 0..12 {
                mask.set(y, x, rng.gen_bool(0.3));
            }
        }
        let cleaned = postprocess(&mask, 0.1);
        assert!(cleaned.is_subset_of(&mask));
        let components = connected_components(&mask);
        if let Some(largest) = components.iter().max_by_key(|c| c.area()) {
            let i = largest.pixels[0];
            assert!(cleaned.get(i / 12, i % 12), "largest component must survive");
        }
        let twice = postprocess(&cleaned, 0.1);
        assert_eq!(twice.bits(), cleaned.bits());
    }
}

#[test]
fn full_chain_is_deterministic() {
    let mut rng = StdRng::seed_from_u64(57);
    let data: Vec<f64> = (0..32 * 32)
        .map(|i| {
            let base: f64 = if (i / 32) < 16 { 0.25 } else { 0.75 };
            (base + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0)
        })
        .collect();
    let h = Heatmap::new(32, 32, data);
    let reference = mask_at_threshold(&h, 0.5);
    let cfg = SegmentConfig::default();
    let a = segment_heatmap(&h, &reference, &cfg, 3).unwrap();
    let b = segment_heatmap(&h, &reference, &cfg, 3).unwrap();
    assert_eq!(a.mask.bits(), b.mask.bits());
    assert_eq!(a.report.chosen_t, b.report.chosen_t);
    assert_eq!(a.fit.ll_history, b.fit.ll_history);
    assert_eq!(a.report.ious.len(), a.report.candidates.len());
    // The chosen IOU is the maximum of the per-candidate IOUs.
    let max = a.report.ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.report.chosen_iou, max);
}
