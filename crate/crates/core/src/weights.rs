//! NNWT: a flat little-endian container of named f32 tensors.
//!
//! Layout: magic `NNWT`, `u32` version (1), `u32` tensor count, then per
//! tensor `u32` name length, UTF-8 name, `u32` ndim, `ndim × u32` dims and
//! `prod(dims) × f32` values. No padding, no trailing bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"NNWT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        NamedTensor {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn from_slice<T: Scalar>(name: impl Into<String>, dims: Vec<usize>, values: &[T]) -> Self {
        Self::new(name, dims, values.iter().map(|v| v.to_f32_lossy()).collect())
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(tensors.len(), "tensor count")?.to_le_bytes());
    for t in tensors {
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!(
                "tensor {} has dims {:?} but {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&to_u32(t.name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&to_u32(t.dims.len(), "ndim")?.to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&to_u32(d, "dim")?.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not an NNWT file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported NNWT version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            dims.push(r.u32("dim")? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let raw = r.take(len, &format!("values of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} tensors",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn write_nnwt(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_nnwt(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
