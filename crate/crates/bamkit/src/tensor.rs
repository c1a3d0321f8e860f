//! Dense row-major tensors and the TNSR container format.
//!
//! A [`Tensor`] is a rank-N array of IEEE-754 floats with a uniform element
//! width (F32 or F64). Tensors are immutable values once built; every
//! operation in this crate returns fresh tensors, so sharing them read-only
//! across threads is safe.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Element width of a tensor, uniform per tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

/// Scalar element of a tensor. Implemented for `f32` and `f64` only.
pub trait Element:
    Copy
    + PartialOrd
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const DTYPE: DType;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn slice(t: &Tensor) -> Option<&[Self]>;
    fn into_tensor(shape: Vec<usize>, data: Vec<Self>) -> Tensor;
}

macro_rules! impl_element {
    ($ty:ty, $dtype:expr, $variant:ident) => {
        impl Element for $ty {
            const DTYPE: DType = $dtype;
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(x: f64) -> Self {
                x as $ty
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }

            fn slice(t: &Tensor) -> Option<&[Self]> {
                match &t.data {
                    Data::$variant(v) => Some(v),
                    _ => None,
                }
            }
            fn into_tensor(shape: Vec<usize>, data: Vec<Self>) -> Tensor {
                Tensor::new(shape, Data::$variant(data))
            }
        }
    };
}

impl_element!(f32, DType::F32, F32);
impl_element!(f64, DType::F64, F64);

#[derive(Debug, Clone, PartialEq)]
enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Data {
    fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::F64(v) => v.len(),
        }
    }
}

/// Rank-N row-major numeric array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Data,
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Data) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match buffer length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let n = shape.iter().product();
        let data = match dtype {
            DType::F32 => Data::F32(vec![0.0; n]),
            DType::F64 => Data::F64(vec![0.0; n]),
        };
        Tensor::new(shape.to_vec(), data)
    }

    pub fn filled(shape: &[usize], value: f64, dtype: DType) -> Self {
        let n = shape.iter().product();
        let data = match dtype {
            DType::F32 => Data::F32(vec![value as f32; n]),
            DType::F64 => Data::F64(vec![value; n]),
        };
        Tensor::new(shape.to_vec(), data)
    }

    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Self {
        Tensor::new(shape.to_vec(), Data::F32(data))
    }

    pub fn from_f64(shape: &[usize], data: Vec<f64>) -> Self {
        Tensor::new(shape.to_vec(), Data::F64(data))
    }

    /// Build a tensor of the given dtype from f64 values.
    pub fn from_f64_vec(shape: &[usize], data: Vec<f64>, dtype: DType) -> Self {
        match dtype {
            DType::F32 => Tensor::from_f32(shape, data.into_iter().map(|x| x as f32).collect()),
            DType::F64 => Tensor::from_f64(shape, data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            Data::F32(_) => DType::F32,
            Data::F64(_) => DType::F64,
        }
    }

    /// Flat element read, widened to f64.
    pub fn at(&self, i: usize) -> f64 {
        match &self.data {
            Data::F32(v) => v[i] as f64,
            Data::F64(v) => v[i],
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Data::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Data::F64(v) => v.clone(),
        }
    }

    /// Convert to the requested dtype (identity if it already matches).
    pub fn cast(&self, dtype: DType) -> Tensor {
        if self.dtype() == dtype {
            return self.clone();
        }
        Tensor::from_f64_vec(&self.shape, self.to_f64_vec(), dtype)
    }

    /// Reinterpret with a new shape of the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        let mut t = self.clone();
        t.shape = shape.to_vec();
        Ok(t)
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            Data::F32(v) => v.iter().all(|x| x.is_finite()),
            Data::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    pub(crate) fn try_slice<T: Element>(&self, op: &'static str) -> Result<&[T]> {
        T::slice(self).ok_or(Error::DtypeMismatch { op })
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        f32::slice(self)
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        f64::slice(self)
    }

    // ---- TNSR container ----------------------------------------------------
    //
    // magic "TNSR" | version u8 = 1 | dtype u8 (1=F32, 2=F64) | rank u8 |
    // reserved u8 = 0 | rank x u64 LE dims | payload row-major LE.

    pub fn write_tnsr<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"TNSR")?;
        w.write_all(&[1, self.dtype().code(), self.rank() as u8, 0])?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &self.data {
            Data::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Data::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_tnsr<R: Read>(r: &mut R, origin: &Path) -> Result<Tensor> {
        let bad = |detail: String| Error::BadFormat {
            path: origin.to_path_buf(),
            detail,
        };
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        if &header[0..4] != b"TNSR" {
            return Err(bad("bad magic, expected TNSR".into()));
        }
        if header[4] != 1 {
            return Err(bad(format!("unsupported format version {}", header[4])));
        }
        let dtype = DType::from_code(header[5])
            .ok_or_else(|| bad(format!("unknown dtype code {}", header[5])))?;
        let rank = header[6] as usize;
        if header[7] != 0 {
            return Err(bad("reserved header byte must be 0".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim = [0u8; 8];
            r.read_exact(&mut dim)?;
            shape.push(u64::from_le_bytes(dim) as usize);
        }
        let n: usize = shape.iter().product();
        let tensor = match dtype {
            DType::F32 => {
                let mut v = Vec::with_capacity(n);
                let mut buf = [0u8; 4];
                for _ in 0..n {
                    r.read_exact(&mut buf)?;
                    v.push(f32::from_le_bytes(buf));
                }
                Tensor::new(shape, Data::F32(v))
            }
            DType::F64 => {
                let mut v = Vec::with_capacity(n);
                let mut buf = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut buf)?;
                    v.push(f64::from_le_bytes(buf));
                }
                Tensor::new(shape, Data::F64(v))
            }
        };
        if !tensor.all_finite() {
            return Err(bad("payload contains non-finite values".into()));
        }
        Ok(tensor)
    }

    pub fn save_tnsr(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.len() * 8);
        self.write_tnsr(&mut buf)?;
        crate::pipeline::write_atomic(path, &buf)
    }

    pub fn load_tnsr(path: &Path) -> Result<Tensor> {
        let bytes = std::fs::read(path).map_err(|e| Error::InputIo {
            path: path.to_path_buf(),
            source: e,
        })?;
        Tensor::read_tnsr(&mut bytes.as_slice(), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_matches_buffer() {
        let t = Tensor::from_f64(&[2, 3], vec![0.0; 6]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.rank(), 2);
        assert_eq!(t.dtype(), DType::F64);
    }

    #[test]
    fn tnsr_round_trip_is_bit_identical() {
        for dtype in [DType::F32, DType::F64] {
            let t = Tensor::from_f64_vec(
                &[2, 2, 3],
                vec![
                    0.0, 1.5, -2.25, 1e-30, 3.125, -0.875, 7.0, 1e10, -1e-10, 0.1, 0.2, 0.3,
                ],
                dtype,
            );
            let mut bytes = Vec::new();
            t.write_tnsr(&mut bytes).unwrap();
            let back = Tensor::read_tnsr(&mut bytes.as_slice(), Path::new("mem")).unwrap();
            let mut bytes2 = Vec::new();
            back.write_tnsr(&mut bytes2).unwrap();
            assert_eq!(bytes, bytes2);
            assert_eq!(t, back);
        }
    }

    #[test]
    fn tnsr_header_layout() {
        let t = Tensor::from_f32(&[1, 2], vec![1.0, 2.0]);
        let mut bytes = Vec::new();
        t.write_tnsr(&mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"TNSR");
        assert_eq!(bytes[4], 1); // version
        assert_eq!(bytes[5], 1); // F32
        assert_eq!(bytes[6], 2); // rank
        assert_eq!(bytes[7], 0); // reserved
        assert_eq!(bytes.len(), 8 + 2 * 8 + 2 * 4);
    }

    #[test]
    fn tnsr_rejects_bad_magic_and_nonfinite() {
        let t = Tensor::from_f32(&[1], vec![1.0]);
        let mut bytes = Vec::new();
        t.write_tnsr(&mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(Tensor::read_tnsr(&mut bytes.as_slice(), Path::new("mem")).is_err());

        let mut bytes = Vec::new();
        t.write_tnsr(&mut bytes).unwrap();
        let nan = f32::NAN.to_le_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&nan);
        assert!(Tensor::read_tnsr(&mut bytes.as_slice(), Path::new("mem")).is_err());
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let t = Tensor::from_f32(&[3], vec![0.5, -1.25, 3.0]);
        let up = t.cast(DType::F64);
        let down = up.cast(DType::F32);
        assert_eq!(t, down);
    }
}
