//! SSFT feature files (little-endian):
//!
//! ```text
//! magic    "SSFT"      4 bytes
//! version  u32 = 1
//! rate_hz  f64
//! dim      u32
//! n_frames u64
//! t0_s     f64
//! payload  n_frames × dim f32, row-major
//! ```

use std::path::Path;

use ndarray::Array2;

use super::FeatureMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSFT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 8 + 8;

pub fn write_ssft(features: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.frames().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&features.rate_hz().to_le_bytes());
    out.extend_from_slice(&(features.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(features.num_frames() as u64).to_le_bytes());
    out.extend_from_slice(&features.t0_s().to_le_bytes());
    for v in features.frames().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_ssft(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("SSFT header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad SSFT magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SSFT version {version}")));
    }
    let rate_hz = f64_at(8);
    let dim = u32_at(16) as usize;
    let n_frames = u64_at(20) as usize;
    let t0_s = f64_at(28);

    let expected = n_frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("SSFT shape overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "SSFT payload is {} bytes, header implies {expected} ({n_frames} × {dim})",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value at frame {} dim {}", i / dim, i % dim)));
    }
    let frames = Array2::from_shape_vec((n_frames, dim), values).map_err(|e| Error::Format(e.to_string()))?;
    FeatureMatrix::new(rate_hz, t0_s, frames).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    read_ssft(&std::fs::read(path)?)
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    std::fs::write(path, write_ssft(features))?;
    Ok(())
}
