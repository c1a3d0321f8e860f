//! Synthetic four-class dataset with known region masks.
//!
//! Each image carries one connected two-zone blob on a noisy skin-toned
//! background: an outer shell with a shared wound color (strong contrast
//! against the background but carrying no class information) and an
//! inner core whose hue band, texture amplitude, and edge softness are
//! class specific. Class is therefore decodable from the core hue alone,
//! while the full blob extent is only visible as generic appearance
//! contrast — so classifier attention concentrates on the core while the
//! ground-truth mask covers the whole blob. Every sample keeps its exact
//! geometric mask, and each class maps to a healing-potential category
//! so paired scan fixtures can be rendered for the benchmark path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ldi::{AlignmentTransform, HpCategory, PaletteTable};
use crate::mask::{connected_components, BinaryMask};
use crate::raster::Rgb8Image;
use crate::tensor::{DType, Tensor};

/// Appearance of one class: the core's hue band, texture, and boundary
/// softness, plus the healing-potential category its scan regions
/// render as. `base_rgb` colors the blob core only; the shell color is
/// shared across classes (see [`SyntheticSpec::shell_rgb`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassArchetype {
    pub name: String,
    pub hp: HpCategory,
    pub base_rgb: [u8; 3],
    pub texture_amplitude: f64,
    pub edge_softness: f64,
}

/// Generator parameters. Radii are fractions of the image side; the
/// area range bounds the mask as a fraction of total pixels. The shell
/// fields describe the class-independent outer zone of every blob, and
/// `core_radius_scale` sets how much of each disk the class-colored
/// core occupies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub image_size: usize,
    pub background_rgb: [u8; 3],
    pub background_noise: f64,
    pub shell_rgb: [u8; 3],
    pub shell_noise: f64,
    pub core_radius_scale: f64,
    pub blob_edge_softness: f64,
    pub disk_count_range: (usize, usize),
    pub radius_range: (f64, f64),
    pub area_fraction_range: (f64, f64),
    pub archetypes: Vec<ClassArchetype>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let arch = |name: &str, hp, base_rgb, texture_amplitude, edge_softness| ClassArchetype {
            name: name.to_string(),
            hp,
            base_rgb,
            texture_amplitude,
            edge_softness,
        };
        SyntheticSpec {
            seed: 1,
            image_size: 64,
            background_rgb: [168, 152, 138],
            background_noise: 10.0,
            shell_rgb: [122, 96, 88],
            shell_noise: 7.0,
            core_radius_scale: 0.40,
            blob_edge_softness: 1.2,
            disk_count_range: (2, 4),
            radius_range: (0.15, 0.23),
            area_fraction_range: (0.08, 0.42),
            archetypes: vec![
                arch("superficial", HpCategory::HpLt14, [188, 64, 58], 6.0, 1.0),
                arch(
                    "superficial-partial",
                    HpCategory::Hp14To21,
                    [84, 150, 58],
                    9.0,
                    1.6,
                ),
                arch(
                    "deep-partial",
                    HpCategory::HpGt21,
                    [82, 76, 170],
                    12.0,
                    2.2,
                ),
                arch(
                    "full-thickness",
                    HpCategory::HpGt21,
                    [182, 150, 48],
                    15.0,
                    2.8,
                ),
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.archetypes.len()
    }
}

/// One labeled image with its exact region mask.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Rgb8Image,
    pub label: usize,
    pub mask: BinaryMask,
}

/// Which half of the dataset a sample belongs to; part of its RNG key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
}

fn stream_rng(seed: u64, stream: u8, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = stream;
    key[9..17].copy_from_slice(&index.to_le_bytes());
    key[17..21].copy_from_slice(b"synb");
    ChaCha8Rng::from_seed(key)
}

fn split_stream(split: Split) -> u8 {
    match split {
        Split::Train => 0,
        Split::Val => 1,
    }
}

#[derive(Clone, Copy)]
struct Disk {
    cx: f64,
    cy: f64,
    r: f64,
}

fn rasterize(disks: &[Disk], size: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let inside = disks.iter().any(|d| {
                let (dx, dy) = (x as f64 - d.cx, y as f64 - d.cy);
                dx * dx + dy * dy <= d.r * d.r
            });
            if inside {
                mask.set(y, x, true);
            }
        }
    }
    mask
}

fn mask_is_valid(mask: &BinaryMask, spec: &SyntheticSpec) -> bool {
    let frac = mask.area() as f64 / (spec.image_size * spec.image_size) as f64;
    frac >= spec.area_fraction_range.0
        && frac <= spec.area_fraction_range.1
        && connected_components(mask).len() == 1
}

/// Draw a chain of overlapping disks; consecutive centers sit closer
/// than the radius sum so the union stays 8-connected after rasterizing.
fn sample_blob(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> (Vec<Disk>, BinaryMask) {
    let s = spec.image_size as f64;
    let (r_lo, r_hi) = (spec.radius_range.0 * s, spec.radius_range.1 * s);
    for _ in 0..64 {
        let n = rng.gen_range(spec.disk_count_range.0..=spec.disk_count_range.1);
        let mut disks = Vec::with_capacity(n);
        let r0 = rng.gen_range(r_lo..=r_hi);
        disks.push(Disk {
            cx: rng.gen_range(s * 0.35..=s * 0.65),
            cy: rng.gen_range(s * 0.35..=s * 0.65),
            r: r0,
        });
        for _ in 1..n {
            let prev: Disk = *disks.last().unwrap();
            let r = rng.gen_range(r_lo..=r_hi);
            let dist = (prev.r + r) * rng.gen_range(0.35..0.70);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            disks.push(Disk {
                cx: (prev.cx + dist * angle.cos()).clamp(2.0, s - 3.0),
                cy: (prev.cy + dist * angle.sin()).clamp(2.0, s - 3.0),
                r,
            });
        }
        let mask = rasterize(&disks, spec.image_size);
        if mask_is_valid(&mask, spec) {
            return (disks, mask);
        }
    }
    // a lone centered disk always satisfies the contract
    let disks = vec![Disk {
        cx: s * 0.5,
        cy: s * 0.5,
        r: (r_lo + r_hi) * 0.5,
    }];
    let mask = rasterize(&disks, spec.image_size);
    (disks, mask)
}

/// Soft coverage of a point by any disk in the chain, with the disk
/// radii scaled by `radius_scale` and the given edge softness in px.
fn coverage(disks: &[Disk], x: f64, y: f64, radius_scale: f64, softness: f64) -> f64 {
    let soft = softness.max(1e-6);
    disks
        .iter()
        .map(|d| {
            let (dx, dy) = (x - d.cx, y - d.cy);
            let dist = (dx * dx + dy * dy).sqrt();
            (0.5 + (d.r * radius_scale - dist) / soft).clamp(0.0, 1.0)
        })
        .fold(0.0f64, f64::max)
}

fn render(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    arch: &ClassArchetype,
    disks: &[Disk],
) -> Rgb8Image {
    let size = spec.image_size;
    let mut img = Rgb8Image::new(size, size);
    for y in 0..size {
        for x in 0..size {
            // soft coverage for color only; the mask stays hard geometry
            let (fx, fy) = (x as f64, y as f64);
            let shell_alpha = coverage(disks, fx, fy, 1.0, spec.blob_edge_softness);
            let core_alpha = coverage(disks, fx, fy, spec.core_radius_scale, arch.edge_softness);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let bg = spec.background_rgb[c] as f64
                    + rng.gen_range(-spec.background_noise..=spec.background_noise);
                let shell = spec.shell_rgb[c] as f64
                    + rng.gen_range(-spec.shell_noise..=spec.shell_noise);
                let core = arch.base_rgb[c] as f64
                    + rng.gen_range(-arch.texture_amplitude..=arch.texture_amplitude);
                let body = bg + shell_alpha * (shell - bg);
                rgb[c] = (body + core_alpha * (core - body))
                    .round()
                    .clamp(0.0, 255.0) as u8;
            }
            img.set(y, x, rgb);
        }
    }
    img
}

fn generate_sample(spec: &SyntheticSpec, split: Split, index: usize) -> Sample {
    let mut rng = stream_rng(spec.seed, split_stream(split), index as u64);
    let label = index % spec.num_classes();
    let (disks, mask) = sample_blob(&mut rng, spec);
    let image = render(&mut rng, spec, &spec.archetypes[label], &disks);
    Sample { image, label, mask }
}

/// Generate both splits. Labels rotate through the classes, so counts
/// are uniform to within one; every sample is keyed by (seed, split,
/// index) and reproduces independently of batch size or order.
pub fn generate_dataset(spec: &SyntheticSpec, n_train: usize, n_val: usize) -> (Vec<Sample>, Vec<Sample>) {
    let train = (0..n_train)
        .map(|i| generate_sample(spec, Split::Train, i))
        .collect();
    let val = (0..n_val)
        .map(|i| generate_sample(spec, Split::Val, i))
        .collect();
    (train, val)
}

/// A rendered scan of one sample in its own (transformed) frame, with
/// landmark pairs tying it back to the photo frame.
#[derive(Debug, Clone)]
pub struct ScanFixture {
    pub scan: Rgb8Image,
    pub landmarks_scan: Vec<(f64, f64)>,
    pub landmarks_photo: Vec<(f64, f64)>,
    /// Maps photo coordinates into the scan frame.
    pub photo_to_scan: AlignmentTransform,
    pub hp: HpCategory,
}

fn mask_bbox(mask: &BinaryMask) -> (f64, f64, f64, f64) {
    let (mut x0, mut y0) = (usize::MAX, usize::MAX);
    let (mut x1, mut y1) = (0usize, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

/// Render the sample's region as a healing-potential scan in a rotated,
/// scaled, shifted frame, and emit exact landmark pairs (mask bounding
/// box corners) for alignment recovery.
pub fn make_scan_fixture(
    spec: &SyntheticSpec,
    sample: &Sample,
    split: Split,
    index: usize,
    palette: &PaletteTable,
) -> ScanFixture {
    let mut rng = stream_rng(spec.seed, split_stream(split) + 2, index as u64);
    let s = spec.image_size as f64;
    let scan_size = (s * 1.5).round() as usize;

    let scale: f64 = rng.gen_range(1.15..=1.35);
    let rotation: f64 = rng.gen_range(-0.25..=0.25);
    // translate so the photo center lands near the scan center
    let (sin, cos) = rotation.sin_cos();
    let c = s * 0.5;
    let half = scan_size as f64 * 0.5;
    let photo_to_scan = AlignmentTransform {
        scale,
        rotation,
        tx: half - scale * (cos * c - sin * c) + rng.gen_range(-3.0..=3.0),
        ty: half - scale * (sin * c + cos * c) + rng.gen_range(-3.0..=3.0),
    };

    let hp = spec.archetypes[sample.label].hp;
    let burn_rgb = palette
        .entries
        .iter()
        .find(|e| e.category == hp)
        .map(|e| e.rgb)
        .unwrap_or([255, 255, 255]);

    let mut scan = Rgb8Image::new(scan_size, scan_size);
    for y in 0..scan_size {
        for x in 0..scan_size {
            let (px, py) = photo_to_scan.inverse((x as f64, y as f64));
            let (ix, iy) = (px.round(), py.round());
            let burned = ix >= 0.0
                && iy >= 0.0
                && (ix as usize) < sample.mask.width()
                && (iy as usize) < sample.mask.height()
                && sample.mask.get(iy as usize, ix as usize);
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                let (base, amp) = if burned {
                    (burn_rgb[ch] as f64, 8.0)
                } else {
                    (0.0, 6.0)
                };
                rgb[ch] = (base + rng.gen_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8;
            }
            scan.set(y, x, rgb);
        }
    }

    let (x0, y0, x1, y1) = mask_bbox(&sample.mask);
    let landmarks_photo = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    let landmarks_scan = landmarks_photo
        .iter()
        .map(|&p| photo_to_scan.apply(p))
        .collect();
    ScanFixture {
        scan,
        landmarks_scan,
        landmarks_photo,
        photo_to_scan,
        hp,
    }
}

/// Pack an image as a [3, H, W] tensor scaled to [0, 1].
pub fn image_to_tensor(img: &Rgb8Image, dtype: DType) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let mut data = vec![0.0f64; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let rgb = img.get(y, x);
            for c in 0..3 {
                data[c * h * w + y * w + x] = rgb[c] as f64 / 255.0;
            }
        }
    }
    Tensor::from_f64_vec(&[3, h, w], data, dtype)
}
