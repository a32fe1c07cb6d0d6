//! `DIPT` tensor container.
//!
//! ```text
//! "DIPT" | u32 version=1 | u8 dtype | u8 ndim | ndim x u32 dims | payload
//! ```
//!
//! All integers are little-endian. dtype 0 is row-major f32. dtype 1 is a
//! packed unsigned-code stream: `dims[0]` rows, each with its own bit width
//! (one u8 per row, stored first), followed by each row's codes packed
//! LSB-first and padded to a byte boundary.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DIPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    PackedUint = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::PackedUint),
            other => Err(Error::MalformedBlob(format!("unknown dtype code {other}"))),
        }
    }
}

/// Dense f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorBlob {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_dims(&dims)?;
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::MalformedBlob(format!(
                "dims {dims:?} describe {expected} elements but {} were given",
                data.len()
            )));
        }
        Ok(TensorBlob { dims, data })
    }

    pub fn dtype(&self) -> DType {
        DType::F32
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Bit-level equality, distinguishing `-0.0` from `0.0` and NaN payloads.
    pub fn bit_eq(&self, other: &TensorBlob) -> bool {
        self.dims == other.dims
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(DType::F32, &self.dims);
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dtype, dims, payload) = parse_header(bytes)?;
        if dtype != DType::F32 {
            return Err(Error::MalformedBlob(format!(
                "expected f32 blob, found {dtype:?}"
            )));
        }
        let count: usize = dims.iter().product();
        if payload.len() != count * 4 {
            return Err(Error::MalformedBlob(format!(
                "payload holds {} bytes, dims {dims:?} need {}",
                payload.len(),
                count * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(TensorBlob { dims, data })
    }
}

/// Rows of unsigned integer codes, each row at its own bit width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    pub row_len: usize,
    pub bits: Vec<u8>,
    pub codes: Vec<Vec<u32>>,
}

impl PackedCodes {
    pub fn new(bits: Vec<u8>, codes: Vec<Vec<u32>>) -> Result<Self> {
        if bits.len() != codes.len() || codes.is_empty() {
            return Err(Error::MalformedBlob(
                "packed codes need one bit width per row and at least one row".into(),
            ));
        }
        let row_len = codes[0].len();
        for (b, row) in bits.iter().zip(&codes) {
            if !(1..=32).contains(b) {
                return Err(Error::MalformedBlob(format!("bit width {b} out of range")));
            }
            if row.len() != row_len || row_len == 0 {
                return Err(Error::MalformedBlob("ragged or empty code rows".into()));
            }
            let limit = if *b == 32 { u32::MAX } else { (1u32 << b) - 1 };
            if row.iter().any(|&c| c > limit) {
                return Err(Error::MalformedBlob(format!("code exceeds {b}-bit range")));
            }
        }
        Ok(PackedCodes {
            row_len,
            bits,
            codes,
        })
    }

    pub fn row_bytes(bits: u8, row_len: usize) -> usize {
        (bits as usize * row_len).div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = [self.codes.len(), self.row_len];
        let mut out = header(DType::PackedUint, &dims);
        out.extend_from_slice(&self.bits);
        for (b, row) in self.bits.iter().zip(&self.codes) {
            out.extend(pack_row(row, *b));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dtype, dims, payload) = parse_header(bytes)?;
        if dtype != DType::PackedUint || dims.len() != 2 {
            return Err(Error::MalformedBlob(
                "expected a 2-d packed-uint blob".into(),
            ));
        }
        let (rows, row_len) = (dims[0], dims[1]);
        if payload.len() < rows {
            return Err(Error::MalformedBlob("truncated bit-width table".into()));
        }
        let (bits, mut rest) = payload.split_at(rows);
        let mut codes = Vec::with_capacity(rows);
        for &b in bits {
            if !(1..=32).contains(&b) {
                return Err(Error::MalformedBlob(format!("bit width {b} out of range")));
            }
            let n = Self::row_bytes(b, row_len);
            if rest.len() < n {
                return Err(Error::MalformedBlob("truncated packed payload".into()));
            }
            let (head, tail) = rest.split_at(n);
            codes.push(unpack_row(head, b, row_len));
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(Error::MalformedBlob("trailing bytes after packed payload".into()));
        }
        PackedCodes::new(bits.to_vec(), codes)
    }
}

fn pack_row(codes: &[u32], bits: u8) -> Vec<u8> {
    let mut out = vec![0u8; PackedCodes::row_bytes(bits, codes.len())];
    let mut pos = 0usize;
    for &code in codes {
        for b in 0..bits as usize {
            if (code >> b) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

fn unpack_row(bytes: &[u8], bits: u8, len: usize) -> Vec<u32> {
    let mut pos = 0usize;
    (0..len)
        .map(|_| {
            let mut code = 0u32;
            for b in 0..bits as usize {
                if (bytes[pos / 8] >> (pos % 8)) & 1 == 1 {
                    code |= 1 << b;
                }
                pos += 1;
            }
            code
        })
        .collect()
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > u8::MAX as usize {
        return Err(Error::MalformedBlob(format!("invalid ndim {}", dims.len())));
    }
    if dims.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(Error::MalformedBlob(format!("invalid dims {dims:?}")));
    }
    Ok(())
}

fn header(dtype: DType, dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

fn parse_header(bytes: &[u8]) -> Result<(DType, Vec<usize>, &[u8])> {
    if bytes.len() < 10 {
        return Err(Error::MalformedBlob("file shorter than header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::MalformedBlob(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::MalformedBlob(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(bytes[8])?;
    let ndim = bytes[9] as usize;
    let dims_end = 10 + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::MalformedBlob("truncated dims".into()));
    }
    let dims: Vec<usize> = bytes[10..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    check_dims(&dims)?;
    Ok((dtype, dims, &bytes[dims_end..]))
}

pub fn write_blob(t: &TensorBlob, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: impl AsRef<Path>) -> Result<TensorBlob> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorBlob::from_bytes(&bytes).map_err(|e| match e {
        Error::MalformedBlob(m) => Error::MalformedBlob(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_packed(p: &PackedCodes, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, p.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_packed(path: impl AsRef<Path>) -> Result<PackedCodes> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PackedCodes::from_bytes(&bytes)
}
