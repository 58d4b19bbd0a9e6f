//! Binary tensor dumps: `GRKB`, u32 version, u8 dtype code, three u64 dims,
//! then little-endian element data. All header fields are little-endian.

use std::io::{Read, Write};

use crate::error::{GrkanError, Result};
use crate::real::{Precision, Real};
use crate::tensor::{ActivationTensor, Shape3};

pub const MAGIC: [u8; 4] = *b"GRKB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 3 * 8;

pub fn write_tensor<T: Real, W: Write>(out: &mut W, tensor: &ActivationTensor<T>) -> Result<()> {
    let shape = tensor.shape();
    let mut buf = Vec::with_capacity(HEADER_LEN + shape.len() * T::PRECISION.byte_width());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(T::PRECISION.dtype_code());
    for d in [shape.batch, shape.seq, shape.feature] {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads the header only.
pub fn read_header<R: Read>(input: &mut R) -> Result<(Precision, Shape3)> {
    let mut head = [0u8; HEADER_LEN];
    input.read_exact(&mut head)?;
    if head[..4] != MAGIC {
        return Err(GrkanError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(GrkanError::Format(format!("unsupported version {version}")));
    }
    let precision = Precision::from_dtype_code(head[8])
        .ok_or_else(|| GrkanError::Format(format!("unknown dtype code {}", head[8])))?;
    let dim = |i: usize| -> Result<usize> {
        let off = 9 + 8 * i;
        let v = u64::from_le_bytes(head[off..off + 8].try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| GrkanError::Format("dimension exceeds usize".into()))
    };
    Ok((precision, Shape3::new(dim(0)?, dim(1)?, dim(2)?)))
}

pub fn read_tensor<T: Real, R: Read>(input: &mut R) -> Result<ActivationTensor<T>> {
    let (precision, shape) = read_header(input)?;
    if precision != T::PRECISION {
        return Err(GrkanError::Format(format!("dump holds {precision}, expected {}", T::PRECISION)));
    }
    let width = precision.byte_width();
    let bytes = shape
        .batch
        .checked_mul(shape.seq)
        .and_then(|v| v.checked_mul(shape.feature))
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| GrkanError::Format("dump size overflows".into()))?;
    let mut body = vec![0u8; bytes];
    input.read_exact(&mut body)?;
    let data = body.chunks_exact(width).map(T::read_le).collect();
    ActivationTensor::new_unchecked(shape, data)
}
