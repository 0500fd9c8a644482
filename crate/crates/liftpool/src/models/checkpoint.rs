//! Checkpoint file format:
//!
//! ```text
//! magic  b"LPCK"
//! u32 LE format version (currently 1)
//! u32 LE header length
//! header JSON: model spec echo, training step, rng seed, and a tensor
//!              directory of { name, shape, offset, len } records
//! payload: concatenated raw little-endian f32 values
//! ```
//!
//! Offsets and lengths count f32 elements into the payload. Save/load round
//! trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelSpec, Params};

pub const MAGIC: &[u8; 4] = b"LPCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected LPCK")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("header is not valid JSON: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor {0} missing from checkpoint directory")]
    MissingTensor(String),
    #[error("tensor {name} shape mismatch: spec wants {expected:?}, file has {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("cannot rebuild model from spec: {0}")]
    Spec(#[from] crate::tensor::TensorError),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    step: u64,
    seed: u64,
    tensors: Vec<TensorRecord>,
}

/// A loaded checkpoint: the rebuilt model plus its training bookkeeping.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub step: u64,
    pub seed: u64,
}

pub fn save_checkpoint(
    model: &Model<f32>,
    step: u64,
    seed: u64,
    path: &Path,
) -> Result<(), CheckpointError> {
    let params = model.params();
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for entry in params.entries() {
        tensors.push(TensorRecord {
            name: entry.name.clone(),
            shape: entry.tensor.shape().to_vec(),
            offset,
            len: entry.tensor.numel() as u64,
        });
        offset += entry.tensor.numel() as u64;
    }
    let header = Header {
        model: model.spec(),
        step,
        seed,
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut file = fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    let mut payload = Vec::with_capacity(offset as usize * 4);
    for entry in params.entries() {
        for &v in entry.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&payload)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated("shorter than the fixed header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::Truncated("header extends past end of file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
    let payload = &bytes[header_end..];
    if !payload.len().is_multiple_of(4) {
        return Err(CheckpointError::Truncated("payload is not whole f32 words".into()));
    }
    let payload_len = (payload.len() / 4) as u64;

    // Rebuild the parameter skeleton from the spec, then fill tensors by name.
    let mut model = Model::<f32>::build(&header.model, header.seed)?;
    fill_params(model.params_mut(), &header, payload, payload_len)?;
    Ok(Checkpoint {
        model,
        step: header.step,
        seed: header.seed,
    })
}

fn fill_params(
    params: &mut Params<f32>,
    header: &Header,
    payload: &[u8],
    payload_len: u64,
) -> Result<(), CheckpointError> {
    for entry in params.entries_mut() {
        let record = header
            .tensors
            .iter()
            .find(|r| r.name == entry.name)
            .ok_or_else(|| CheckpointError::MissingTensor(entry.name.clone()))?;
        if record.shape != entry.tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                expected: entry.tensor.shape().to_vec(),
                got: record.shape.clone(),
            });
        }
        let end = record
            .offset
            .checked_add(record.len)
            .filter(|&e| e <= payload_len)
            .ok_or_else(|| {
                CheckpointError::Truncated(format!("tensor {} extends past payload", entry.name))
            })?;
        if record.len as usize != entry.tensor.numel() {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                expected: entry.tensor.shape().to_vec(),
                got: record.shape.clone(),
            });
        }
        let dst = entry.tensor.data_mut();
        for (i, slot) in dst.iter_mut().enumerate() {
            let at = (record.offset as usize + i) * 4;
            *slot = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
        }
        let _ = end;
    }
    Ok(())
}
