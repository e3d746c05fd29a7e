//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//! `b"SCLF"`, u32 version, u32 V, u32 H1, u32 H2, u32 C, u64 count, then
//! `count` IEEE-754 f64 values in flat layout order. Nothing may follow.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{ModelSpec, ParamVector, NUM_CLASSES};

pub const MAGIC: [u8; 4] = *b"SCLF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 * 5 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("length mismatch: header dims imply {expected} values, header/payload give {found}")]
    LengthMismatch { expected: u64, found: u64 },
    #[error("invalid model dims in header: {0}")]
    InvalidSpec(String),
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
}

fn dim(v: usize) -> Result<u32, CheckpointError> {
    u32::try_from(v).map_err(|_| CheckpointError::InvalidSpec(format!("dimension {v} exceeds u32")))
}

/// Serializes `params` under `spec`. The vector length must match the spec.
pub fn encode(params: &ParamVector, spec: &ModelSpec) -> Result<Vec<u8>, CheckpointError> {
    let expected = spec
        .checked_param_count()
        .ok_or_else(|| CheckpointError::InvalidSpec("parameter count overflows".into()))?;
    if expected != params.len() {
        return Err(CheckpointError::LengthMismatch {
            expected: expected as u64,
            found: params.len() as u64,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        dim(spec.hash_buckets)?,
        dim(spec.hidden1)?,
        dim(spec.hidden2)?,
        dim(NUM_CLASSES)?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a checkpoint. Never allocates more than the input size.
pub fn decode(bytes: &[u8]) -> Result<(ParamVector, ModelSpec), CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let [v, h1, h2, c] = [8, 12, 16, 20].map(|at| read_u32(bytes, at) as usize);
    let count = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    if c != NUM_CLASSES {
        return Err(CheckpointError::InvalidSpec(format!("{c} classes (expected {NUM_CLASSES})")));
    }
    let spec = ModelSpec::new(v, h1, h2).map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;
    let expected = spec
        .checked_param_count()
        .ok_or_else(|| CheckpointError::InvalidSpec("parameter count overflows".into()))?;
    if count != expected as u64 {
        return Err(CheckpointError::LengthMismatch {
            expected: expected as u64,
            found: count,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let needed = expected
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| CheckpointError::InvalidSpec("payload size overflows".into()))?;
    if bytes.len() < needed {
        return Err(CheckpointError::Truncated {
            needed,
            have: bytes.len(),
        });
    }
    if payload.len() != expected * 8 {
        return Err(CheckpointError::LengthMismatch {
            expected: expected as u64,
            found: (payload.len() / 8) as u64,
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(CheckpointError::NonFinite { index });
    }
    Ok((ParamVector::from_vec(values), spec))
}

pub fn save_params(params: &ParamVector, spec: &ModelSpec, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(params, spec)?;
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<(ParamVector, ModelSpec), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes)
}
