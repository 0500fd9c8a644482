//! IDX binary format: two zero bytes, a dtype byte, a dimension-count byte,
//! big-endian u32 dimension sizes, then the payload. Only the u8 dtype (0x08)
//! is supported; values are scaled by 1/255.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::DataError;

const FORMAT: &str = "idx";
const DTYPE_U8: u8 = 0x08;

/// Header-validated shape plus the raw u8 payload (used for label files).
pub fn parse_idx_raw(bytes: &[u8]) -> Result<(Vec<usize>, Vec<u8>), DataError> {
    let (shape, payload) = parse_validated(bytes)?;
    Ok((shape, payload.to_vec()))
}

/// IDX tensor with u8 values scaled by 1/255.
pub fn parse_idx<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>, DataError> {
    let (shape, payload) = parse_validated(bytes)?;
    let scale = T::one() / T::from_usize_lossy(255);
    let data = payload
        .iter()
        .map(|&b| T::from_usize_lossy(b as usize) * scale)
        .collect();
    Tensor::new(shape, data).map_err(|e| DataError::Invalid(e.to_string()))
}

fn parse_validated(bytes: &[u8]) -> Result<(Vec<usize>, &[u8]), DataError> {
    if bytes.len() < 4 {
        return Err(DataError::malformed(FORMAT, "magic", "fewer than 4 header bytes"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(DataError::malformed(
            FORMAT,
            "magic",
            format!("first two bytes must be zero, got {:#04x} {:#04x}", bytes[0], bytes[1]),
        ));
    }
    let dtype = bytes[2];
    if dtype != DTYPE_U8 {
        return Err(DataError::malformed(
            FORMAT,
            "dtype",
            format!("unsupported dtype {dtype:#04x}, only u8 (0x08) is supported"),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(DataError::malformed(FORMAT, "ndim", "zero dimensions"));
    }
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(DataError::malformed(
            FORMAT,
            "dims",
            format!("header wants {ndim} u32 dims but the file is too short"),
        ));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut expected = 1usize;
    for i in 0..ndim {
        let at = 4 + 4 * i;
        let dim = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(DataError::malformed(FORMAT, "dims", format!("dimension {i} is zero")));
        }
        expected = expected.checked_mul(dim).ok_or_else(|| {
            DataError::malformed(FORMAT, "dims", "dimension product overflows")
        })?;
        shape.push(dim);
    }
    let payload = &bytes[header_len..];
    if payload.len() != expected {
        return Err(DataError::malformed(
            FORMAT,
            "payload",
            format!("expected {expected} bytes, got {}", payload.len()),
        ));
    }
    Ok((shape, payload))
}
