//! Benchmark masks from palette-coded perfusion scans.
//!
//! Scans are aligned to their paired photographs with a least-squares
//! similarity transform estimated from landmark pairs, warped by
//! nearest-neighbor resampling (category colors must not blend), classified
//! per pixel against a palette of healing-potential categories, restricted
//! to the manually segmented burn area, and finally split into one binary
//! mask per category plus their union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::Rgb8Image;

/// Healing-potential category a scan color encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HpCategory {
    #[serde(rename = "HP_LT_14")]
    HpLt14,
    #[serde(rename = "HP_14_21")]
    Hp14To21,
    #[serde(rename = "HP_GT_21")]
    HpGt21,
    #[serde(rename = "NON_BURN")]
    NonBurn,
}

impl HpCategory {
    pub const BURN_CATEGORIES: [HpCategory; 3] =
        [HpCategory::HpLt14, HpCategory::Hp14To21, HpCategory::HpGt21];

    pub fn is_burn(self) -> bool {
        self != HpCategory::NonBurn
    }

    pub fn label(self) -> &'static str {
        match self {
            HpCategory::HpLt14 => "HP < 14",
            HpCategory::Hp14To21 => "14 < HP < 21",
            HpCategory::HpGt21 => "HP > 21",
            HpCategory::NonBurn => "non-burn",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub rgb: [u8; 3],
    pub category: HpCategory,
}

/// Ordered color table; earlier entries win distance ties.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaletteTable {
    pub entries: Vec<PaletteEntry>,
}

impl PaletteTable {
    /// Palette used by the synthetic scans: fast-healing regions render
    /// red/pink, intermediate green/yellow, slow blue, background black.
    pub fn synthetic_default() -> Self {
        let entry = |rgb, category| PaletteEntry { rgb, category };
        PaletteTable {
            entries: vec![
                entry([200, 40, 40], HpCategory::HpLt14),
                entry([230, 120, 150], HpCategory::HpLt14),
                entry([40, 170, 60], HpCategory::Hp14To21),
                entry([220, 210, 60], HpCategory::Hp14To21),
                entry([50, 80, 200], HpCategory::HpGt21),
                entry([90, 170, 230], HpCategory::HpGt21),
                entry([0, 0, 0], HpCategory::NonBurn),
            ],
        }
    }

    /// Every burn category must be representable.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyInput { op: "palette" });
        }
        for cat in HpCategory::BURN_CATEGORIES {
            if !self.entries.iter().any(|e| e.category == cat) {
                return Err(Error::InvalidArgument {
                    op: "palette",
                    detail: format!("no palette entry for category {}", cat.label()),
                });
            }
        }
        Ok(())
    }
}

/// Similarity transform q = s·R(theta)·p + (tx, ty).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlignmentTransform {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AlignmentTransform {
    pub fn identity() -> Self {
        AlignmentTransform {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (sin, cos) = self.rotation.sin_cos();
        (
            self.scale * (cos * p.0 - sin * p.1) + self.tx,
            self.scale * (sin * p.0 + cos * p.1) + self.ty,
        )
    }

    pub fn inverse(&self, q: (f64, f64)) -> (f64, f64) {
        let (sin, cos) = self.rotation.sin_cos();
        let dx = (q.0 - self.tx) / self.scale;
        let dy = (q.1 - self.ty) / self.scale;
        (cos * dx + sin * dy, -sin * dx + cos * dy)
    }
}

/// Estimated transform plus its root-mean-square landmark residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentFit {
    pub transform: AlignmentTransform,
    pub residual_rms: f64,
}

/// Least-squares similarity transform mapping scan landmarks onto photo
/// landmarks. Treating points as complex numbers, the model q = a·p + b is
/// linear and a = s·e^(i·theta) solves in closed form.
pub fn estimate_alignment(
    landmarks_scan: &[(f64, f64)],
    landmarks_photo: &[(f64, f64)],
) -> Result<AlignmentFit> {
    let n = landmarks_scan.len();
    if n != landmarks_photo.len() {
        return Err(Error::ShapeMismatch {
            op: "estimate_alignment",
            detail: format!("{n} scan landmarks vs {}", landmarks_photo.len()),
        });
    }
    if n < 2 {
        return Err(Error::DegenerateLandmarks {
            detail: format!("need at least 2 landmark pairs, got {n}"),
        });
    }
    let nf = n as f64;
    let pc = (
        landmarks_scan.iter().map(|p| p.0).sum::<f64>() / nf,
        landmarks_scan.iter().map(|p| p.1).sum::<f64>() / nf,
    );
    let qc = (
        landmarks_photo.iter().map(|q| q.0).sum::<f64>() / nf,
        landmarks_photo.iter().map(|q| q.1).sum::<f64>() / nf,
    );
    // a = sum((q - qc) * conj(p - pc)) / sum(|p - pc|^2)
    let mut num = (0.0, 0.0);
    let mut den = 0.0;
    for (p, q) in landmarks_scan.iter().zip(landmarks_photo) {
        let dp = (p.0 - pc.0, p.1 - pc.1);
        let dq = (q.0 - qc.0, q.1 - qc.1);
        num.0 += dq.0 * dp.0 + dq.1 * dp.1;
        num.1 += dq.1 * dp.0 - dq.0 * dp.1;
        den += dp.0 * dp.0 + dp.1 * dp.1;
    }
    if den == 0.0 {
        return Err(Error::DegenerateLandmarks {
            detail: "scan landmarks are coincident".to_string(),
        });
    }
    let a = (num.0 / den, num.1 / den);
    let scale = (a.0 * a.0 + a.1 * a.1).sqrt();
    if scale <= 0.0 {
        return Err(Error::DegenerateLandmarks {
            detail: "landmarks fit a zero-scale transform".to_string(),
        });
    }
    let rotation = a.1.atan2(a.0);
    let tx = qc.0 - (a.0 * pc.0 - a.1 * pc.1);
    let ty = qc.1 - (a.1 * pc.0 + a.0 * pc.1);
    let transform = AlignmentTransform {
        scale,
        rotation,
        tx,
        ty,
    };
    let mut sq_sum = 0.0;
    for (p, q) in landmarks_scan.iter().zip(landmarks_photo) {
        let t = transform.apply(*p);
        sq_sum += (t.0 - q.0).powi(2) + (t.1 - q.1).powi(2);
    }
    Ok(AlignmentFit {
        transform,
        residual_rms: (sq_sum / nf).sqrt(),
    })
}

/// Resample the scan into the photo frame by inverse mapping with
/// nearest-neighbor lookup; out-of-bounds pixels get `fill`.
pub fn warp_scan(
    scan: &Rgb8Image,
    transform: &AlignmentTransform,
    out_width: usize,
    out_height: usize,
    fill: [u8; 3],
) -> Rgb8Image {
    let mut out = Rgb8Image::new(out_width, out_height);
    for y in 0..out_height {
        for x in 0..out_width {
            let (sx, sy) = transform.inverse((x as f64, y as f64));
            let (ix, iy) = (sx.round(), sy.round());
            let rgb = if ix >= 0.0
                && iy >= 0.0
                && (ix as usize) < scan.width()
                && (iy as usize) < scan.height()
            {
                scan.get(iy as usize, ix as usize)
            } else {
                fill
            };
            out.set(y, x, rgb);
        }
    }
    out
}

/// Per-pixel healing-potential categories at scan resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    width: usize,
    height: usize,
    categories: Vec<HpCategory>,
}

impl CategoryMap {
    pub fn new(width: usize, height: usize, categories: Vec<HpCategory>) -> Self {
        assert_eq!(categories.len(), width * height);
        CategoryMap {
            width,
            height,
            categories,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, y: usize, x: usize) -> HpCategory {
        self.categories[y * self.width + x]
    }

    pub fn categories(&self) -> &[HpCategory] {
        &self.categories
    }
}

/// Assign every pixel the category of the nearest palette color in
/// Euclidean RGB distance; ties go to the earlier table entry.
pub fn classify_palette(scan: &Rgb8Image, table: &PaletteTable) -> Result<CategoryMap> {
    table.validate()?;
    let mut categories = Vec::with_capacity(scan.width() * scan.height());
    for y in 0..scan.height() {
        for x in 0..scan.width() {
            let px = scan.get(y, x);
            let mut best = (u32::MAX, HpCategory::NonBurn);
            for entry in &table.entries {
                let d = px
                    .iter()
                    .zip(&entry.rgb)
                    .map(|(&a, &b)| {
                        let diff = a as i32 - b as i32;
                        (diff * diff) as u32
                    })
                    .sum::<u32>();
                if d < best.0 {
                    best = (d, entry.category);
                }
            }
            categories.push(best.1);
        }
    }
    Ok(CategoryMap::new(scan.width(), scan.height(), categories))
}

/// Force pixels outside the manual burn segmentation to non-burn.
pub fn restrict_to_manual(map: &CategoryMap, manual: &BinaryMask) -> Result<CategoryMap> {
    if manual.height() != map.height || manual.width() != map.width {
        return Err(Error::ShapeMismatch {
            op: "restrict_to_manual",
            detail: format!(
                "manual mask {}x{} vs category map {}x{}",
                manual.height(),
                manual.width(),
                map.height,
                map.width
            ),
        });
    }
    let categories = map
        .categories
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if manual.bits()[i] == 1 {
                c
            } else {
                HpCategory::NonBurn
            }
        })
        .collect();
    Ok(CategoryMap::new(map.width, map.height, categories))
}

/// One binary mask per burn category plus their union.
#[derive(Debug, Clone)]
pub struct LdiMasks {
    pub hp_lt_14: BinaryMask,
    pub hp_14_21: BinaryMask,
    pub hp_gt_21: BinaryMask,
    pub union: BinaryMask,
}

impl LdiMasks {
    pub fn for_category(&self, cat: HpCategory) -> Option<&BinaryMask> {
        match cat {
            HpCategory::HpLt14 => Some(&self.hp_lt_14),
            HpCategory::Hp14To21 => Some(&self.hp_14_21),
            HpCategory::HpGt21 => Some(&self.hp_gt_21),
            HpCategory::NonBurn => None,
        }
    }
}

pub fn ldi_masks(map: &CategoryMap) -> LdiMasks {
    let mut hp_lt_14 = BinaryMask::zeros(map.height, map.width);
    let mut hp_14_21 = BinaryMask::zeros(map.height, map.width);
    let mut hp_gt_21 = BinaryMask::zeros(map.height, map.width);
    let mut union = BinaryMask::zeros(map.height, map.width);
    for y in 0..map.height {
        for x in 0..map.width {
            let target = match map.get(y, x) {
                HpCategory::HpLt14 => &mut hp_lt_14,
                HpCategory::Hp14To21 => &mut hp_14_21,
                HpCategory::HpGt21 => &mut hp_gt_21,
                HpCategory::NonBurn => continue,
            };
            target.set(y, x, true);
            union.set(y, x, true);
        }
    }
    LdiMasks {
        hp_lt_14,
        hp_14_21,
        hp_gt_21,
        union,
    }
}

#[cfg(test)]
mod tests;
