use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;

#[test]
fn aligned_landmarks_give_identity() {
    let pts = vec![(3.0, 4.0), (20.0, 7.0), (11.0, 30.0)];
    let fit = estimate_alignment(&pts, &pts).unwrap();
    let t = fit.transform;
    assert!((t.scale - 1.0).abs() < 1e-9);
    assert!(t.rotation.abs() < 1e-9);
    assert!(t.tx.abs() < 1e-9);
    assert!(t.ty.abs() < 1e-9);
    assert!(fit.residual_rms < 1e-9);
}

#[test]
fn recovers_known_similarity_transform() {
    let truth = AlignmentTransform {
        scale: 1.5,
        rotation: 0.3,
        tx: 10.0,
        ty: -4.0,
    };
    let scan: Vec<(f64, f64)> = vec![(0.0, 0.0), (40.0, 5.0), (12.0, 33.0), (25.0, 18.0)];
    let photo: Vec<(f64, f64)> = scan.iter().map(|&p| truth.apply(p)).collect();
    let fit = estimate_alignment(&scan, &photo).unwrap();
    assert!((fit.transform.scale - 1.5).abs() < 1e-6);
    assert!((fit.transform.rotation - 0.3).abs() < 1e-6);
    assert!((fit.transform.tx - 10.0).abs() < 1e-6);
    assert!((fit.transform.ty + 4.0).abs() < 1e-6);
    assert!(fit.residual_rms < 1e-9);
}

#[test]
fn two_pairs_fit_exactly() {
    let scan = vec![(1.0, 2.0), (9.0, 5.0)];
    let photo = vec![(4.0, -1.0), (20.5, 8.0)];
    let fit = estimate_alignment(&scan, &photo).unwrap();
    assert!(fit.residual_rms < 1e-9);
    for (p, q) in scan.iter().zip(&photo) {
        let t = fit.transform.apply(*p);
        assert!((t.0 - q.0).abs() < 1e-9);
        assert!((t.1 - q.1).abs() < 1e-9);
    }
}

#[test]
fn coincident_landmarks_are_degenerate() {
    let scan = vec![(5.0, 5.0), (5.0, 5.0), (5.0, 5.0)];
    let photo = vec![(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)];
    assert!(matches!(
        estimate_alignment(&scan, &photo),
        Err(Error::DegenerateLandmarks { .. })
    ));
    assert!(estimate_alignment(&[(1.0, 1.0)], &[(2.0, 2.0)]).is_err());
}

#[test]
fn inverse_undoes_apply() {
    let t = AlignmentTransform {
        scale: 0.7,
        rotation: -1.1,
        tx: 3.5,
        ty: 12.0,
    };
    let mut rng = StdRng::seed_from_u64(70);
    for _ in 0..20 {
        let p = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let round = t.inverse(t.apply(p));
        assert!((round.0 - p.0).abs() < 1e-9);
        assert!((round.1 - p.1).abs() < 1e-9);
    }
}

fn noise_scan(seed: u64, w: usize, h: usize) -> Rgb8Image {
    let mut rng = StdRng::seed_from_u64(seed);
    Rgb8Image::from_raw(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

#[test]
fn identity_warp_is_bit_identical() {
    let scan = noise_scan(71, 12, 9);
    let out = warp_scan(&scan, &AlignmentTransform::identity(), 12, 9, [0, 0, 0]);
    assert_eq!(out, scan);
}

#[test]
fn integer_translation_shifts_pixels() {
    let scan = noise_scan(72, 10, 10);
    let t = AlignmentTransform {
        scale: 1.0,
        rotation: 0.0,
        tx: 3.0,
        ty: 2.0,
    };
    let out = warp_scan(&scan, &t, 10, 10, [9, 9, 9]);
    for y in 0..10 {
        for x in 0..10 {
            let expect = if x >= 3 && y >= 2 {
                scan.get(y - 2, x - 3)
            } else {
                [9, 9, 9]
            };
            assert_eq!(out.get(y, x), expect);
        }
    }
}

#[test]
fn scale_round_trip_mostly_preserves_blocky_images() {
    // 4x4 blocks of flat color survive a 2x upscale and 0.5x downscale.
    let mut scan = Rgb8Image::new(32, 32);
    let mut rng = StdRng::seed_from_u64(73);
    for by in 0..8 {
        for bx in 0..8 {
            let color = [rng.gen(), rng.gen(), rng.gen()];
            for y in 0..4 {
                for x in 0..4 {
                    scan.set(by * 4 + y, bx * 4 + x, color);
                }
            }
        }
    }
    let double = AlignmentTransform {
        scale: 2.0,
        rotation: 0.0,
        tx: 0.0,
        ty: 0.0,
    };
    let halve = AlignmentTransform {
        scale: 0.5,
        rotation: 0.0,
        tx: 0.0,
        ty: 0.0,
    };
    let up = warp_scan(&scan, &double, 64, 64, [0, 0, 0]);
    let back = warp_scan(&up, &halve, 32, 32, [0, 0, 0]);
    let mut agree = 0;
    for y in 0..32 {
        for x in 0..32 {
            if back.get(y, x) == scan.get(y, x) {
                agree += 1;
            }
        }
    }
    let frac = agree as f64 / (32.0 * 32.0);
    assert!(frac >= 0.99, "agreement {frac}");
}

#[test]
fn exact_palette_colors_classify_exactly() {
    let table = PaletteTable::synthetic_default();
    let mut scan = Rgb8Image::new(table.entries.len(), 1);
    for (i, entry) in table.entries.iter().enumerate() {
        scan.set(0, i, entry.rgb);
    }
    let map = classify_palette(&scan, &table).unwrap();
    for (i, entry) in table.entries.iter().enumerate() {
        assert_eq!(map.get(0, i), entry.category);
    }
}

#[test]
fn black_scan_is_all_non_burn() {
    let table = PaletteTable::synthetic_default();
    let scan = Rgb8Image::new(8, 8);
    let map = classify_palette(&scan, &table).unwrap();
    assert!(map.categories().iter().all(|&c| c == HpCategory::NonBurn));
}

#[test]
fn ties_resolve_to_earlier_palette_entry() {
    let table = PaletteTable {
        entries: vec![
            PaletteEntry {
                rgb: [100, 0, 0],
                category: HpCategory::HpLt14,
            },
            PaletteEntry {
                rgb: [100, 0, 20],
                category: HpCategory::Hp14To21,
            },
            PaletteEntry {
                rgb: [0, 100, 0],
                category: HpCategory::Hp14To21,
            },
            PaletteEntry {
                rgb: [0, 0, 100],
                category: HpCategory::HpGt21,
            },
        ],
    };
    // Equidistant between the first two entries.
    let mut scan = Rgb8Image::new(1, 1);
    scan.set(0, 0, [100, 0, 10]);
    let map = classify_palette(&scan, &table).unwrap();
    assert_eq!(map.get(0, 0), HpCategory::HpLt14);
}

#[test]
fn noisy_palette_classification_stays_accurate() {
    let table = PaletteTable::synthetic_default();
    let mut rng = StdRng::seed_from_u64(74);
    let n = 40;
    let mut scan = Rgb8Image::new(n, n);
    let mut truth = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let entry = &table.entries[rng.gen_range(0..table.entries.len())];
            let noisy = entry.rgb.map(|c| {
                (c as i32 + rng.gen_range(-10..=10)).clamp(0, 255) as u8
            });
            scan.set(y, x, noisy);
            truth.push(entry.category);
        }
    }
    let map = classify_palette(&scan, &table).unwrap();
    let correct = map
        .categories()
        .iter()
        .zip(&truth)
        .filter(|(a, b)| a == b)
        .count();
    let acc = correct as f64 / (n * n) as f64;
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn palette_missing_a_burn_category_is_invalid() {
    let table = PaletteTable {
        entries: vec![PaletteEntry {
            rgb: [200, 0, 0],
            category: HpCategory::HpLt14,
        }],
    };
    assert!(table.validate().is_err());
    assert!(PaletteTable { entries: vec![] }.validate().is_err());
}

fn checker_map(n: usize) -> CategoryMap {
    let categories = (0..n * n)
        .map(|i| {
            let (y, x) = (i / n, i % n);
            match (y + x) % 4 {
                0 => HpCategory::HpLt14,
                1 => HpCategory::Hp14To21,
                2 => HpCategory::HpGt21,
                _ => HpCategory::NonBurn,
            }
        })
        .collect();
    CategoryMap::new(n, n, categories)
}

#[test]
fn restrict_with_full_mask_is_identity() {
    let map = checker_map(8);
    let out = restrict_to_manual(&map, &BinaryMask::ones(8, 8)).unwrap();
    assert_eq!(out, map);
}

#[test]
fn restrict_with_empty_mask_clears_everything() {
    let map = checker_map(8);
    let out = restrict_to_manual(&map, &BinaryMask::zeros(8, 8)).unwrap();
    assert!(out.categories().iter().all(|&c| c == HpCategory::NonBurn));
}

#[test]
fn restrict_keeps_burn_pixels_only_inside_mask() {
    let map = checker_map(8);
    let mut manual = BinaryMask::zeros(8, 8);
    for y in 0..8 {
        for x in 0..8 {
            manual.set(y, x, (y + x) % 2 == 0);
        }
    }
    let out = restrict_to_manual(&map, &manual).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            if !manual.get(y, x) {
                assert_eq!(out.get(y, x), HpCategory::NonBurn);
            } else {
                assert_eq!(out.get(y, x), map.get(y, x));
            }
        }
    }
    let masks = ldi_masks(&out);
    assert!(masks.union.is_subset_of(&manual));
    assert!(restrict_to_manual(&map, &BinaryMask::zeros(4, 4)).is_err());
}

#[test]
fn single_category_map_puts_everything_in_one_mask() {
    let map = CategoryMap::new(4, 4, vec![HpCategory::Hp14To21; 16]);
    let masks = ldi_masks(&map);
    assert_eq!(masks.hp_14_21.area(), 16);
    assert_eq!(masks.hp_lt_14.area(), 0);
    assert_eq!(masks.hp_gt_21.area(), 0);
    assert_eq!(masks.union.bits(), masks.hp_14_21.bits());
}

#[test]
fn category_masks_partition_burn_pixels() {
    let mut rng = StdRng::seed_from_u64(75);
    for _ in 0..20 {
        let categories: Vec<HpCategory> = (0..100)
            .map(|_| match rng.gen_range(0..4) {
                0 => HpCategory::HpLt14,
                1 => HpCategory::Hp14To21,
                2 => HpCategory::HpGt21,
                _ => HpCategory::NonBurn,
            })
            .collect();
        let map = CategoryMap::new(10, 10, categories.clone());
        let masks = ldi_masks(&map);
        for i in 0..100 {
            let bits = [
                masks.hp_lt_14.bits()[i],
                masks.hp_14_21.bits()[i],
                masks.hp_gt_21.bits()[i],
            ];
            let set: u8 = bits.iter().sum();
            let expect_union = categories[i].is_burn() as u8;
            assert_eq!(set, expect_union, "pixel {i} in exactly one burn mask");
            assert_eq!(masks.union.bits()[i], expect_union);
        }
        let total = masks.hp_lt_14.area() + masks.hp_14_21.area() + masks.hp_gt_21.area();
        assert_eq!(total, masks.union.area());
    }
}

#[test]
fn palette_table_round_trips_through_json() {
    let table = PaletteTable::synthetic_default();
    let json = serde_json::to_string_pretty(&table).unwrap();
    assert!(json.contains("HP_LT_14"));
    assert!(json.contains("NON_BURN"));
    let back: PaletteTable = serde_json::from_str(&json).unwrap();
    assert_eq!(back.entries.len(), table.entries.len());
    for (a, b) in back.entries.iter().zip(&table.entries) {
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.category, b.category);
    }
}
