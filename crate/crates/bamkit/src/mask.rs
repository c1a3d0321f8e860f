//! Binary masks and the connected-component machinery built on them.

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// Single-channel {0,1} image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Self {
        assert_eq!(bits.len(), height * width);
        assert!(bits.iter().all(|&b| b <= 1), "mask values must be 0 or 1");
        BinaryMask {
            height,
            width,
            bits,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other, "mask union")?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a | b)
                .collect(),
        })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other, "mask intersection")?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a & b)
                .collect(),
        })
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other)
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(&a, &b)| a == 0 || b == 1)
    }

    pub fn check_dims(&self, other: &BinaryMask, op: &'static str) -> Result<()> {
        if !self.same_dims(other) {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!(
                    "{}x{} vs {}x{}",
                    self.height, self.width, other.height, other.width
                ),
            });
        }
        Ok(())
    }

    /// Mask as a `[H, W]` tensor of 0/1 values.
    pub fn to_tensor(&self, dtype: DType) -> Tensor {
        Tensor::from_f64_vec(
            &[self.height, self.width],
            self.bits.iter().map(|&b| b as f64).collect(),
            dtype,
        )
    }

    /// Rebuild a mask from a tensor; values >= 0.5 become 1.
    pub fn from_tensor(t: &Tensor) -> Result<BinaryMask> {
        if t.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "mask from tensor",
                detail: format!("expected rank 2, got {:?}", t.shape()),
            });
        }
        let (h, w) = (t.shape()[0], t.shape()[1]);
        let bits = (0..t.len()).map(|i| (t.at(i) >= 0.5) as u8).collect();
        Ok(BinaryMask::new(h, w, bits))
    }
}

/// One 8-connected region of set pixels.
#[derive(Debug, Clone)]
pub struct Component {
    pub pixels: Vec<usize>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Label 8-connected components of set pixels, in row-major discovery order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = (mask.height(), mask.width());
    let mut visited = vec![false; h * w];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.bits[start] == 0 || visited[start] {
            continue;
        }
        let mut pixels = Vec::new();
        visited[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (y, x) = (p / w, p % w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.bits[q] == 1 && !visited[q] {
                        visited[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        pixels.sort_unstable();
        components.push(Component { pixels });
    }
    components
}

/// Set pixels that have at least one background 8-neighbour (pixels outside
/// the image count as background). This is identical to mask minus its
/// 3x3 erosion.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut edge = false;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        edge = true;
                        break 'scan;
                    }
                    if !mask.get(ny as usize, nx as usize) {
                        edge = true;
                        break 'scan;
                    }
                }
            }
            if edge {
                out.set(y, x, true);
            }
        }
    }
    out
}
