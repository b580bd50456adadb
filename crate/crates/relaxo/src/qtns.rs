//! QTNS tensor file format.
//!
//! Layout, all little-endian:
//!   magic `b"QTNS"` | version: u32 = 1 | dtype: u32 | ndim: u32 |
//!   ndim x u64 dims | row-major payload.
//!
//! Dtype codes: 1 = f32, 2 = f64, 3 = complex64 (interleaved f32 re,im),
//! 4 = complex128 (interleaved f64 re,im).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::{Complex32, Complex64};

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"QTNS";
pub const VERSION: u32 = 1;

/// Any array the pipeline serializes.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    C64(ArrayD<Complex32>),
    C128(ArrayD<Complex64>),
}

impl Tensor {
    pub fn dtype_code(&self) -> u32 {
        match self {
            Tensor::F32(_) => 1,
            Tensor::F64(_) => 2,
            Tensor::C64(_) => 3,
            Tensor::C128(_) => 4,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::F64(a) => a.shape(),
            Tensor::C64(a) => a.shape(),
            Tensor::C128(a) => a.shape(),
        }
    }

    pub fn as_f64(&self) -> Option<&ArrayD<f64>> {
        match self {
            Tensor::F64(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_c128(&self) -> Option<&ArrayD<Complex64>> {
        match self {
            Tensor::C128(a) => Some(a),
            _ => None,
        }
    }
}

impl From<ArrayD<f64>> for Tensor {
    fn from(a: ArrayD<f64>) -> Self {
        Tensor::F64(a)
    }
}

impl From<ArrayD<Complex64>> for Tensor {
    fn from(a: ArrayD<Complex64>) -> Self {
        Tensor::C128(a)
    }
}

pub fn tensor_write(path: &Path, t: &Tensor) -> Result<()> {
    if t.shape().iter().any(|&d| d == 0) {
        return Err(Error::ZeroDim);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&t.dtype_code().to_le_bytes()).map_err(io)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    match t {
        Tensor::F32(a) => {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Tensor::F64(a) => {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Tensor::C64(a) => {
            for v in a.iter() {
                w.write_all(&v.re.to_le_bytes()).map_err(io)?;
                w.write_all(&v.im.to_le_bytes()).map_err(io)?;
            }
        }
        Tensor::C128(a) => {
            for v in a.iter() {
                w.write_all(&v.re.to_le_bytes()).map_err(io)?;
                w.write_all(&v.im.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn tensor_read(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let dtype = read_u32(&mut r, path)?;
    let ndim = read_u32(&mut r, path)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(io)?;
        shape.push(u64::from_le_bytes(buf) as usize);
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ZeroDim);
    }
    let n: usize = shape.iter().product();

    let elem_bytes = match dtype {
        1 => 4,
        2 => 8,
        3 => 8,
        4 => 16,
        other => return Err(Error::UnknownDtype(other)),
    };
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io)?;
    if payload.len() < n * elem_bytes {
        return Err(Error::Truncated {
            expected: n * elem_bytes,
            found: payload.len(),
        });
    }

    let ix = IxDyn(&shape);
    let t = match dtype {
        1 => Tensor::F32(ArrayD::from_shape_vec(
            ix,
            payload
                .chunks_exact(4)
                .take(n)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
        .unwrap()),
        2 => Tensor::F64(ArrayD::from_shape_vec(
            ix,
            payload
                .chunks_exact(8)
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
        .unwrap()),
        3 => Tensor::C64(ArrayD::from_shape_vec(
            ix,
            payload
                .chunks_exact(8)
                .take(n)
                .map(|c| {
                    Complex32::new(
                        f32::from_le_bytes(c[0..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    )
                })
                .collect(),
        )
        .unwrap()),
        4 => Tensor::C128(ArrayD::from_shape_vec(
            ix,
            payload
                .chunks_exact(16)
                .take(n)
                .map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[0..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    )
                })
                .collect(),
        )
        .unwrap()),
        _ => unreachable!(),
    };
    Ok(t)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn round_trip_2x2_real() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.qtns");
        let a = arr2(&[[1.0f64, 2.0], [3.0, 4.0]]).into_dyn();
        tensor_write(&p, &Tensor::F64(a.clone())).unwrap();
        // 32-byte header (4 magic + 4 version + 4 dtype + 4 ndim + 2*8 dims) + 32-byte payload
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 32 + 32);
        let back = tensor_read(&p).unwrap();
        assert_eq!(back, Tensor::F64(a));
    }

    #[test]
    fn zero_sized_dim_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.qtns");
        let a = ArrayD::<f64>::zeros(IxDyn(&[2, 0]));
        assert!(matches!(tensor_write(&p, &Tensor::F64(a)), Err(Error::ZeroDim)));
    }

    #[test]
    fn complex_3x4x5_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.qtns");
        let a = ArrayD::<Complex64>::zeros(IxDyn(&[3, 4, 5]));
        tensor_write(&p, &Tensor::C128(a.clone())).unwrap();
        assert_eq!(tensor_read(&p).unwrap(), Tensor::C128(a));
    }

    #[test]
    fn bad_magic_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.qtns");
        std::fs::write(&p, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(matches!(tensor_read(&p), Err(Error::BadMagic)));
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.qtns");
        let a = ArrayD::<f64>::zeros(IxDyn(&[10]));
        tensor_write(&p, &Tensor::F64(a)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // drop the last element
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(tensor_read(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn unknown_dtype_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.qtns");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"QTNS");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(tensor_read(&p), Err(Error::UnknownDtype(99))));
    }
}
