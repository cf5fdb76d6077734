//! FMF1 array files.
//!
//! Layout, little-endian: magic `FMF1`, `u32` version (1), `u8` dtype
//! (0 = f64, 1 = complex128 interleaved), `u8` ndim, `u64` dims, then the
//! row-major payload.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMF1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum FmfData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl FmfData {
    pub fn len(&self) -> usize {
        match self {
            FmfData::Real(v) => v.len(),
            FmfData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmfArray {
    pub dims: Vec<u64>,
    pub data: FmfData,
}

impl FmfArray {
    pub fn real(dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        Self::checked(dims, FmfData::Real(data))
    }

    pub fn complex(dims: Vec<u64>, data: Vec<Complex64>) -> Result<Self> {
        Self::checked(dims, FmfData::Complex(data))
    }

    fn checked(dims: Vec<u64>, data: FmfData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Format("too many dimensions".into()));
        }
        let expect: u64 = dims.iter().product();
        if expect != data.len() as u64 {
            return Err(Error::Format(format!("dims {dims:?} hold {expect} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let dtype: u8 = match self.data {
            FmfData::Real(_) => 0,
            FmfData::Complex(_) => 1,
        };
        w.write_all(&[dtype, self.dims.len() as u8])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(16 * self.data.len());
        match &self.data {
            FmfData::Real(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            FmfData::Complex(v) => v.iter().for_each(|x| {
                buf.extend_from_slice(&x.re.to_le_bytes());
                buf.extend_from_slice(&x.im.to_le_bytes());
            }),
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 10];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dtype = head[8];
        let ndim = head[9] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            dims.push(u64::from_le_bytes(b));
        }
        let count = dims.iter().try_fold(1u64, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("dims overflow".into()))?;
        let width = match dtype {
            0 => 8,
            1 => 16,
            _ => return Err(Error::Format(format!("unknown dtype {dtype}"))),
        };
        let bytes = usize::try_from(count).ok().and_then(|c| c.checked_mul(width)).ok_or_else(|| Error::Format("payload too large".into()))?;
        let mut payload = Vec::new();
        r.take(bytes as u64).read_to_end(&mut payload)?;
        if payload.len() != bytes {
            return Err(Error::Format(format!("truncated payload: expected {bytes} bytes, got {}", payload.len())));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
        let data = if dtype == 0 {
            FmfData::Real(payload.chunks_exact(8).map(f).collect())
        } else {
            FmfData::Complex(payload.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect())
        };
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
