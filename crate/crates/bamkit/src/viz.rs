//! Visual overlays for inspecting masks against their source images.

use crate::error::{Error, Result};
use crate::mask::{boundary, BinaryMask};
use crate::raster::Rgb8Image;

/// Paints the boundary pixels of `mask` onto a copy of `image` in `color`.
///
/// A boundary pixel is a mask pixel with at least one 8-neighbor outside the
/// mask (image edges count as outside). Interior mask pixels and background
/// are left untouched, so the overlay reads as a thin outline.
pub fn overlay_boundary(image: &Rgb8Image, mask: &BinaryMask, color: [u8; 3]) -> Result<Rgb8Image> {
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(Error::ShapeMismatch {
            op: "overlay_boundary",
            detail: format!(
                "image is {}x{} but mask is {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            ),
        });
    }
    let outline = boundary(mask);
    let mut out = image.clone();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if outline.get(y, x) {
                out.set(y, x, color);
            }
        }
    }
    Ok(out)
}
