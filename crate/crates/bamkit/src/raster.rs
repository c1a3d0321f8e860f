//! 8-bit raster images and their on-disk formats.
//!
//! PNG (non-interlaced 8-bit RGB or grayscale) is the interchange format
//! for every emitted image; binary PPM/PGM is available as a debugging
//! fallback. Writes are atomic and reads of our own artifacts round-trip
//! losslessly.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ExtendedColorType, ImageFormat};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::pipeline::write_atomic;

/// Interleaved RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize) -> Self {
        Rgb8Image {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                op: "rgb8_from_raw",
                detail: format!(
                    "{} bytes for {width}x{height} RGB image",
                    pixels.len()
                ),
            });
        }
        Ok(Rgb8Image {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Gray8Image {
    pub fn new(width: usize, height: usize) -> Self {
        Gray8Image {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch {
                op: "gray8_from_raw",
                detail: format!("{} bytes for {width}x{height} gray image", pixels.len()),
            });
        }
        Ok(Gray8Image {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Masks serialize as 0/255 grayscale.
pub fn mask_to_gray(mask: &BinaryMask) -> Gray8Image {
    Gray8Image {
        width: mask.width(),
        height: mask.height(),
        pixels: mask.bits().iter().map(|&b| b * 255).collect(),
    }
}

/// Values at or above 128 count as foreground.
pub fn gray_to_mask(img: &Gray8Image) -> BinaryMask {
    BinaryMask::new(
        img.height,
        img.width,
        img.pixels.iter().map(|&v| (v >= 128) as u8).collect(),
    )
}

/// Map a `[0,1]` heatmap to 8-bit gray (rounded).
pub fn heatmap_to_gray(map: &crate::gradcam::Heatmap) -> Gray8Image {
    Gray8Image {
        width: map.width(),
        height: map.height(),
        pixels: map
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    }
}

fn bad_format(path: &Path, err: image::ImageError) -> Error {
    Error::BadFormat {
        path: path.to_path_buf(),
        detail: err.to_string(),
    }
}

pub fn write_png_rgb8(path: &Path, img: &Rgb8Image) -> Result<()> {
    let mut bytes = Vec::new();
    image::write_buffer_with_format(
        &mut Cursor::new(&mut bytes),
        &img.pixels,
        img.width as u32,
        img.height as u32,
        ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| bad_format(path, e))?;
    write_atomic(path, &bytes)
}

pub fn write_png_gray8(path: &Path, img: &Gray8Image) -> Result<()> {
    let mut bytes = Vec::new();
    image::write_buffer_with_format(
        &mut Cursor::new(&mut bytes),
        &img.pixels,
        img.width as u32,
        img.height as u32,
        ExtendedColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| bad_format(path, e))?;
    write_atomic(path, &bytes)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::InputIo {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_png_rgb8(path: &Path) -> Result<Rgb8Image> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| bad_format(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Rgb8Image::from_raw(w, h, img.into_raw())
}

pub fn read_png_gray8(path: &Path) -> Result<Gray8Image> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| bad_format(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Gray8Image::from_raw(w, h, img.into_raw())
}

/// Binary PPM (P6), the debug fallback format.
pub fn write_ppm(path: &Path, img: &Rgb8Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    write_atomic(path, &bytes)
}

pub fn read_ppm(path: &Path) -> Result<Rgb8Image> {
    let bytes = read_bytes(path)?;
    let bad = |detail: &str| Error::BadFormat {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    // Header: magic, width, height, maxval, each followed by whitespace;
    // '#' starts a comment running to end of line.
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields.len() < 4 || fields[0] != "P6" {
        return Err(bad("expected binary P6 header"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    Rgb8Image::from_raw(width, height, bytes[pos..pos + need].to_vec())
}
