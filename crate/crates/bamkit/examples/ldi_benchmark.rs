//! Build benchmark masks from a rendered scan: recover the scan-to-photo
//! alignment from landmark pairs, warp the scan into the photo frame,
//! classify its palette colors into healing-potential categories, and
//! restrict the result to the manually segmented region.
//!
//! Run with: cargo run --example ldi_benchmark

use std::path::PathBuf;

use bamkit::ldi::{
    classify_palette, estimate_alignment, ldi_masks, restrict_to_manual, warp_scan, PaletteTable,
};
use bamkit::raster::{mask_to_gray, write_png_gray8, write_png_rgb8};
use bamkit::segment::iou;
use bamkit::synth::{generate_dataset, make_scan_fixture, Split, SyntheticSpec};

fn main() -> bamkit::Result<()> {
    let spec = SyntheticSpec::default();
    let palette = PaletteTable::synthetic_default();
    let (_, val) = generate_dataset(&spec, 1, 3);
    let out = PathBuf::from("target/examples/ldi_benchmark");

    for (i, sample) in val.iter().enumerate() {
        let fixture = make_scan_fixture(&spec, sample, Split::Val, i, &palette);
        println!(
            "sample {i}: class {} renders as {:?} in the scan",
            spec.archetypes[sample.label].name, fixture.hp
        );

        let fit = estimate_alignment(&fixture.landmarks_scan, &fixture.landmarks_photo)?;
        println!(
            "  recovered alignment: scale {:.4} rotation {:.4} translation ({:.2}, {:.2}), residual {:.2e}",
            fit.transform.scale,
            fit.transform.rotation,
            fit.transform.tx,
            fit.transform.ty,
            fit.residual_rms
        );

        let warped = warp_scan(
            &fixture.scan,
            &fit.transform,
            spec.image_size,
            spec.image_size,
            [0, 0, 0],
        );
        let categories = classify_palette(&warped, &palette)?;
        let restricted = restrict_to_manual(&categories, &sample.mask)?;
        let masks = ldi_masks(&restricted);
        println!(
            "  category pixels after restriction: <14d {}  14-21d {}  >21d {}  union {}",
            masks.hp_lt_14.area(),
            masks.hp_14_21.area(),
            masks.hp_gt_21.area(),
            masks.union.area()
        );
        if let Some(own) = masks.for_category(fixture.hp) {
            println!(
                "  IOU of the {:?} mask against the ground-truth region: {:.4}",
                fixture.hp,
                iou(own, &sample.mask)?
            );
        }

        let dir = out.join(format!("sample_{i}"));
        write_png_rgb8(&dir.join("scan.png"), &fixture.scan)?;
        write_png_rgb8(&dir.join("warped.png"), &warped)?;
        write_png_gray8(&dir.join("hp_union.png"), &mask_to_gray(&masks.union))?;
    }
    println!("\nartifacts written under {}", out.display());
    Ok(())
}
