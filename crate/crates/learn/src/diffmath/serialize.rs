//! Flat little-endian parameter files.
//!
//! Layout: magic, `u32` version, `u64` tensor count, then per tensor a `u32`
//! name length, the UTF-8 name, a `u32` rank, one `u64` per dimension and the
//! row-major `f64` values.

use std::io::{Read, Write};

use super::Tensor;
use crate::{LearnError, Result};

pub const PARAM_MAGIC: &[u8; 8] = b"IPPPARAM";
pub const PARAM_VERSION: u32 = 1;

pub type NamedTensor = (String, Tensor);

pub fn write_params<W: Write>(mut out: W, params: &[NamedTensor]) -> Result<()> {
    out.write_all(PARAM_MAGIC)?;
    out.write_all(&PARAM_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&2u32.to_le_bytes())?;
        out.write_all(&(t.rows() as u64).to_le_bytes())?;
        out.write_all(&(t.cols() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * t.len());
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<R: Read>(mut input: R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != PARAM_MAGIC {
        return Err(LearnError::Format("not a parameter file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != PARAM_VERSION {
        return Err(LearnError::Format(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut input)?;
    let mut params = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| LearnError::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut input)?;
        let dims = (0..rank).map(|_| read_u64(&mut input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(LearnError::Format(format!("tensor {name} has rank {rank}"))),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| LearnError::Format("tensor too large".into()))?;
        let mut raw = vec![0u8; 8 * n];
        input.read_exact(&mut raw).map_err(truncated)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        params.push((name, Tensor::new(rows, cols, data)?));
    }
    Ok(params)
}

fn truncated(e: std::io::Error) -> LearnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        LearnError::Format("file is truncated".into())
    } else {
        LearnError::Io(e)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}
