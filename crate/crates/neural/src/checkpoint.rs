//! Binary parameter container.
//!
//! Layout: 8 magic bytes, a little-endian `u32` format version, a `u64`
//! header length, a JSON header (encoder config, frozen flag, tensor table,
//! data checksum), then every tensor as little-endian `f32` in table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::params::{EncoderConfig, EncoderParams, Layout};
use crate::NeuralError;

pub const MAGIC: &[u8; 8] = b"UNIFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: EncoderConfig,
    pub frozen: bool,
    pub tensors: Vec<TensorInfo>,
    pub checksum: String,
    /// Free-form metadata (variant, training config echo, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn to_bytes(params: &EncoderParams<f32>, meta: serde_json::Value) -> Vec<u8> {
    let tensors = Layout::tensors(&params.config)
        .into_iter()
        .map(|(name, shape, r)| TensorInfo {
            name,
            shape,
            offset: r.start,
            len: r.len(),
        })
        .collect();
    let header = Header {
        config: params.config.clone(),
        frozen: params.frozen,
        tensors,
        checksum: params.checksum(),
        meta,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&params.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(EncoderParams<f32>, Header), NeuralError> {
    let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (magic bytes differ)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + header_len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    let raw = &bytes[20 + header_len..];
    if !raw.len().is_multiple_of(4) {
        return Err(bad("tensor data is not a whole number of f32 values"));
    }
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let expected: Vec<(String, Vec<usize>, usize, usize)> = Layout::tensors(&header.config)
        .into_iter()
        .map(|(n, s, r)| (n, s, r.start, r.len()))
        .collect();
    let found: Vec<(String, Vec<usize>, usize, usize)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone(), t.offset, t.len))
        .collect();
    if expected != found {
        return Err(bad("tensor table does not match the configured architecture"));
    }
    let params = EncoderParams::from_data(&header.config, data, header.frozen)?;
    if params.checksum() != header.checksum {
        return Err(bad("checksum mismatch"));
    }
    Ok((params, header))
}

pub fn save(path: &Path, params: &EncoderParams<f32>, meta: serde_json::Value) -> Result<(), NeuralError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| NeuralError::io(dir, e))?;
    }
    // write then rename so a reader never sees a partial file
    let tmp = path.with_extension("partial");
    fs::write(&tmp, to_bytes(params, meta)).map_err(|e| NeuralError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| NeuralError::io(path, e))
}

pub fn load(path: &Path) -> Result<(EncoderParams<f32>, Header), NeuralError> {
    let bytes = fs::read(path).map_err(|e| NeuralError::io(path, e))?;
    from_bytes(&bytes)
}
