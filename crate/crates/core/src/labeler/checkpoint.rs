//! Labeler checkpoints (little-endian):
//!
//! ```text
//! magic       "SSCK"   4 bytes
//! version     u32 = 1
//! header_len  u32
//! header      JSON: {"config", "threshold", "steps", "tensors": [{"name", "shape"}, …]}
//! payload     every listed tensor as f32, row-major, in header order
//! ```
//!
//! The tensor list starts with `input_shift` and `input_scale` and continues with the trainable
//! tensors in [`Params::tensors`] order. Parameters are always f32-representable, so loading a
//! saved checkpoint reproduces them bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LabelerConfig, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: LabelerConfig,
    pub params: Params,
    pub threshold: f64,
    pub steps: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: LabelerConfig,
    threshold: f64,
    steps: u64,
    tensors: Vec<TensorInfo>,
}

fn all_tensors(p: &Params) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
    let mut out = vec![
        ("input_shift".to_string(), p.input_shift.view().into_dyn()),
        ("input_scale".to_string(), p.input_scale.view().into_dyn()),
    ];
    out.extend(p.tensors());
    out
}

pub fn write_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = all_tensors(&ck.params);
    let header = Header {
        config: ck.config.clone(),
        threshold: ck.threshold,
        steps: ck.steps,
        tensors: tensors.iter().map(|(n, t)| TensorInfo { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in &tensors {
        for &v in t.iter() {
            let f = v as f32;
            if f as f64 != v {
                return Err(Error::Format(format!("{name} holds {v}, which is not an f32 value")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a labeler checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + header_len).ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut params = Params::init(&header.config)?;
    let mut payload = &bytes[12 + header_len..];
    let expected: Vec<(String, Vec<usize>)> =
        all_tensors(&params).into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if header.tensors.len() != expected.len()
        || header.tensors.iter().zip(&expected).any(|(h, (n, s))| &h.name != n || &h.shape != s)
    {
        return Err(Error::Format("checkpoint tensors do not match its config".into()));
    }
    let mut take = |n: usize| -> Result<Vec<f64>> {
        if payload.len() < 4 * n {
            return Err(Error::Format("checkpoint payload truncated".into()));
        }
        let (head, rest) = payload.split_at(4 * n);
        payload = rest;
        Ok(head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    };
    params.input_shift = take(params.input_shift.len())?.into();
    params.input_scale = take(params.input_scale.len())?.into();
    for (_, mut t) in params.tensors_mut() {
        let values = take(t.len())?;
        for (slot, v) in t.iter_mut().zip(values) {
            *slot = v;
        }
    }
    if !payload.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint payload", payload.len())));
    }
    Ok(Checkpoint { config: header.config, params, threshold: header.threshold, steps: header.steps })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, write_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&std::fs::read(path)?)
}
