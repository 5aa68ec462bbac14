//! Binary tensor files: `GRCN` magic, `u32` version, `u32` rank, `u32`
//! dims, then little-endian `f64` data in row-major order.

use std::path::Path;

use grurcn_core::Tensor;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GRCN";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(bytes.get(at..at + 4)?.try_into().ok()?))
}

/// Parses an encoded tensor; the error string says what is wrong.
pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.get(..4) != Some(MAGIC) {
        return Err("missing GRCN magic".into());
    }
    let version = u32_at(bytes, 4).ok_or("truncated header")?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rank = u32_at(bytes, 8).ok_or("truncated header")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32_at(bytes, 12 + 4 * i).ok_or("truncated dims")? as usize);
    }
    let start = 12 + 4 * rank;
    let count: usize = shape.iter().product();
    let body = &bytes[start.min(bytes.len())..];
    if body.len() != 8 * count {
        return Err(format!(
            "expected {} data bytes for shape {shape:?}, found {}",
            8 * count,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(Error::io(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|e| Error::format(path, e))
}
