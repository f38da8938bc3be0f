//! Flat binary container of named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "FMHF"
//! version    u32      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   precision u8      0 = f32, 1 = f64
//!   rank     u32, extents u64 × rank
//!   values   row-major, 4 or 8 bytes each
//! ```

use std::io::{Read, Write};
use std::path::Path;

use flashmhf_core::model::{FlashDims, FlashMhfParams, PARAM_ROLES};
use flashmhf_core::{Precision, Scalar, Tensor};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"FMHF";
pub const VERSION: u32 = 1;

/// A tensor as stored on disk, in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    Single(Tensor<f32>),
    Double(Tensor<f64>),
}

impl Stored {
    pub fn shape(&self) -> &[usize] {
        match self {
            Stored::Single(t) => t.shape(),
            Stored::Double(t) => t.shape(),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            Stored::Single(_) => Precision::Single,
            Stored::Double(_) => Precision::Double,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            Stored::Single(t) => t.cast(),
            Stored::Double(t) => t.cast(),
        }
    }
}

fn tag(p: Precision) -> u8 {
    match p {
        Precision::Single => 0,
        Precision::Double => 1,
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Container(msg.into())
}

pub fn write_container<W: Write>(mut w: W, entries: &[(String, Stored)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[tag(t.precision())])?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match t {
            Stored::Single(t) => t.data().iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?,
            Stored::Double(t) => t.data().iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?,
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_container(bytes: &[u8]) -> CliResult<Vec<(String, Stored)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| bad("name is not UTF-8"))?.to_string();
        let precision = c.take(1)?[0];
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(usize::try_from(c.u64()?).map_err(|_| bad("extent overflows usize"))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("element count overflows"))?;
        let stored = match precision {
            0 => {
                let raw = c.take(n.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?;
                let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                Stored::Single(Tensor::new(&shape, data)?)
            }
            1 => {
                let raw = c.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
                let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                Stored::Double(Tensor::new(&shape, data)?)
            }
            t => return Err(bad(format!("unknown precision tag {t} for {name}"))),
        };
        out.push((name, stored));
    }
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

pub fn read_container<R: Read>(mut r: R) -> CliResult<Vec<(String, Stored)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| bad(e.to_string()))?;
    decode_container(&bytes)
}

fn stored<T: Scalar>(t: &Tensor<T>) -> Stored {
    match T::PRECISION {
        Precision::Single => Stored::Single(t.cast()),
        Precision::Double => Stored::Double(t.cast()),
    }
}

pub fn params_to_entries<T: Scalar>(p: &FlashMhfParams<T>) -> Vec<(String, Stored)> {
    p.tensors().iter().map(|(name, t)| (name.to_string(), stored(*t))).collect()
}

/// Rebuilds parameters by role name and validates them against `dims`.
pub fn params_from_entries<T: Scalar>(entries: &[(String, Stored)], dims: &FlashDims) -> CliResult<FlashMhfParams<T>> {
    let get = |role: &str| -> CliResult<Tensor<T>> {
        entries
            .iter()
            .find(|(n, _)| n == role)
            .map(|(_, t)| t.to_tensor())
            .ok_or_else(|| bad(format!("missing tensor {role}")))
    };
    let p = FlashMhfParams {
        w_in: get(PARAM_ROLES[0])?,
        keys: get(PARAM_ROLES[1])?,
        ups: get(PARAM_ROLES[2])?,
        values: get(PARAM_ROLES[3])?,
        w_gate: get(PARAM_ROLES[4])?,
        w_out: get(PARAM_ROLES[5])?,
    };
    p.validate(dims)?;
    Ok(p)
}

pub fn save_params<T: Scalar>(path: &Path, p: &FlashMhfParams<T>) -> CliResult<()> {
    let mut buf = Vec::new();
    write_container(&mut buf, &params_to_entries(p)).map_err(|e| CliError::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

pub fn load_params<T: Scalar>(path: &Path, dims: &FlashDims) -> CliResult<FlashMhfParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    params_from_entries(&decode_container(&bytes)?, dims)
}
