//! Generate a handful of synthetic samples and write image/mask previews.
//!
//! Each class renders blob regions with its own color family, texture
//! amplitude, and edge softness on a shared skin-tone background; the exact
//! region mask comes along for free.
//!
//! Run with: cargo run --example synth_preview

use std::path::PathBuf;

use bamkit::raster::{mask_to_gray, write_png_gray8, write_png_rgb8};
use bamkit::synth::{generate_dataset, SyntheticSpec};

fn main() -> bamkit::Result<()> {
    let spec = SyntheticSpec::default();
    let (train, val) = generate_dataset(&spec, 8, 4);
    let out = PathBuf::from("target/examples/synth_preview");

    println!("classes:");
    for (label, arch) in spec.archetypes.iter().enumerate() {
        println!("  {label}: {} (base color {:?})", arch.name, arch.base_rgb);
    }
    println!();

    for (split, samples) in [("train", &train), ("val", &val)] {
        for (i, s) in samples.iter().enumerate() {
            let image_path = out.join(format!("{split}_{i:02}_{}.png", spec.archetypes[s.label].name));
            let mask_path = out.join(format!("{split}_{i:02}_mask.png"));
            write_png_rgb8(&image_path, &s.image)?;
            write_png_gray8(&mask_path, &mask_to_gray(&s.mask))?;
            println!(
                "{} -> label {} ({}), {} region pixels",
                image_path.display(),
                s.label,
                spec.archetypes[s.label].name,
                s.mask.area()
            );
        }
    }
    println!("\npreviews written under {}", out.display());
    Ok(())
}
