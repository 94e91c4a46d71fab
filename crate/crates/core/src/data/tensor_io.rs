//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//! `"S2S1"` | version `u8 = 1` | entry count `u32` | entries. Each entry is
//! name length `u16`, UTF-8 name, dtype `u8` (0 = f32, 1 = f64), rank `u8`,
//! extents `u64 × rank`, then the row-major payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"S2S1";
pub const VERSION: u8 = 1;

/// A tensor of either supported element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to the requested element type.
    pub fn to<T: Element>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

pub fn encode_tensors(entries: &[(String, AnyTensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let count = u32::try_from(entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.dtype().code());
        let shape = tensor.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Format(format!("rank too large for {name}")))?;
        out.push(rank);
        for &e in shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match tensor {
            AnyTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            AnyTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
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
        let Some(end) = end else {
            return Err(Error::Format(format!("truncated {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Parse a whole container. Any defect fails the call without returning a
/// partial result.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.array::<1>("version")?[0];
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(r.array("entry count")?);
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        let code = r.array::<1>("dtype")?[0];
        let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("{name}: unknown dtype {code}")))?;
        let rank = r.array::<1>("rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = u64::from_le_bytes(r.array("extent")?);
            shape.push(usize::try_from(e).map_err(|_| Error::Format(format!("{name}: extent {e} too large")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::Format(format!("{name}: payload size overflows")))?;
        let payload = r.take(n, "payload")?;
        let tensor = match dtype {
            DType::F32 => AnyTensor::F32(Tensor::new(
                shape,
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            )
            .map_err(|e| Error::Format(format!("{name}: {e}")))?),
            DType::F64 => AnyTensor::F64(Tensor::new(
                shape,
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            )
            .map_err(|e| Error::Format(format!("{name}: {e}")))?),
        };
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn write_tensors(path: &Path, entries: &[(String, AnyTensor)]) -> Result<()> {
    let bytes = encode_tensors(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, AnyTensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes)
}
