//! `VTAT` binary tensor format: magic, `u32` version, `u32` rank,
//! `u64` dims, then little-endian `f64` data.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"VTAT";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Truncated(format!("tensor {what}: {e}")))?;
    Ok(buf)
}

/// Reads one tensor as a constant.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let magic: [u8; 4] = read_exact(r, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format {
            path: "<tensor stream>".into(),
            detail: format!("bad tensor magic {magic:?}"),
        });
    }
    let version = u32::from_le_bytes(read_exact(r, "version")?);
    if version != TENSOR_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "tensor",
            found: version,
            expected: TENSOR_FORMAT_VERSION,
        });
    }
    let rank = u32::from_le_bytes(read_exact(r, "rank")?) as usize;
    if rank > 8 {
        return Err(Error::Truncated(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(read_exact(r, "dims")?) as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Truncated(format!("tensor dims overflow: {shape:?}")))?;
    let mut raw = vec![0u8; numel.checked_mul(8).ok_or_else(|| Error::Truncated("size".into()))?];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Truncated(format!("tensor data: {e}")))?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(&shape, data)
}
