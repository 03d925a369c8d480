//! Binary tensor blobs.
//!
//! Layout (all integers little-endian):
//!
//! | bytes   | field                          |
//! |---------|--------------------------------|
//! | 4       | magic `TNSR`                   |
//! | 2       | version, `1`                   |
//! | 1       | dtype (`0` = f32, `1` = f64)   |
//! | 1       | rank                           |
//! | 8·rank  | dims as u64                    |
//! | rest    | row-major payload              |

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{TensorData, TensorValue};
use crate::ir::{DType, TensorSpec};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum BlobError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported blob version {0}")]
    Version(u16),
    #[error("unknown dtype code {0}")]
    DType(u8),
    #[error("invalid extents {0:?}")]
    Dims(Vec<u64>),
    #[error("payload has {found} bytes, expected {expected}")]
    Payload { expected: usize, found: usize },
}

pub fn write_blob<W: Write>(mut w: W, tensor: &TensorValue) -> io::Result<()> {
    let spec = tensor.spec();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype_code(spec.dtype), spec.rank() as u8])?;
    for &d in &spec.dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match tensor.data() {
        TensorData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
    }
}

pub fn to_bytes(tensor: &TensorValue) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * tensor.spec().rank() + tensor.spec().size_in_bytes());
    write_blob(&mut out, tensor).expect("writing to a Vec cannot fail");
    out
}

pub fn read_blob<R: Read>(mut r: R) -> Result<TensorValue, BlobError> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(BlobError::Magic(magic));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(BlobError::Version(version));
    }
    let dtype = match header[6] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(BlobError::DType(other)),
    };
    let rank = header[7] as usize;
    let mut raw_dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        raw_dims.push(u64::from_le_bytes(b));
    }
    if rank == 0 || raw_dims.contains(&0) || raw_dims.iter().any(|&d| d > u32::MAX as u64) {
        return Err(BlobError::Dims(raw_dims));
    }
    let dims: Vec<usize> = raw_dims.iter().map(|&d| d as usize).collect();
    let spec = TensorSpec::new(dtype, dims);

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != spec.size_in_bytes() {
        return Err(BlobError::Payload {
            expected: spec.size_in_bytes(),
            found: payload.len(),
        });
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
    };
    Ok(TensorValue::new(spec, data).expect("payload length checked"))
}

fn dtype_code(dtype: DType) -> u8 {
    match dtype {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}
