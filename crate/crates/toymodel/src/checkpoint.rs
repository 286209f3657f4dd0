//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"MSCK" | u32 version (1) | u32 header length | header JSON | f32 values
//! ```
//!
//! The header records the model config, the init seed and every parameter's
//! name, component, layer depth and shape. Values follow in header order,
//! each tensor row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToyError};
use crate::model::{ToyConfig, ToyModel};
use crate::params::{ParamSpec, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MSCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ToyConfig,
    pub seed: u64,
    pub params: Vec<ParamSpec>,
}

pub fn to_bytes(model: &ToyModel, seed: u64) -> Result<Vec<u8>> {
    let header = CheckpointHeader { config: model.config.clone(), seed, params: model.params.specs.clone() };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.params.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &model.params.values {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(ToyModel, CheckpointHeader)> {
    let bad = |message: &str| ToyError::Checkpoint { path: path.to_path_buf(), message: message.to_string() };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    let mut rest = &bytes[12 + len..];
    let mut values = Vec::with_capacity(header.params.len());
    for spec in &header.params {
        let n = spec.rows * spec.cols;
        if rest.len() < 4 * n {
            return Err(bad("truncated parameter data"));
        }
        let data = rest[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        values.push(Tensor::from_vec(spec.rows, spec.cols, data));
        rest = &rest[4 * n..];
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes after parameter data"));
    }
    let store = ParamStore { specs: header.params.clone(), values };
    let model = ToyModel::with_params(header.config.clone(), store).map_err(|e| bad(&e.to_string()))?;
    Ok((model, header))
}

pub fn save(model: &ToyModel, seed: u64, path: &Path) -> Result<()> {
    let bytes = to_bytes(model, seed)?;
    std::fs::write(path, bytes).map_err(|source| ToyError::Io { path: path.to_path_buf(), source })
}

pub fn load(path: &Path) -> Result<(ToyModel, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|source| ToyError::Io { path: path.to_path_buf(), source })?;
    from_bytes(&bytes, path)
}

/// Rounds every parameter to `f32`, as a save/load round trip would.
pub fn quantize(model: &mut ToyModel) {
    for t in &mut model.params.values {
        for v in &mut t.data {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_after_quantization() {
        let mut model = ToyModel::new(ToyConfig::tiny(), 3).unwrap();
        quantize(&mut model);
        let bytes = to_bytes(&model, 3).unwrap();
        assert_eq!(&bytes[..4], b"MSCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let (back, header) = from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(header.seed, 3);
        assert_eq!(back.params, model.params);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let model = ToyModel::new(ToyConfig::tiny(), 0).unwrap();
        let bytes = to_bytes(&model, 0).unwrap();
        assert!(from_bytes(b"XXXX0000", Path::new("x")).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra, Path::new("x")).is_err());
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        assert!(from_bytes(&wrong_version, Path::new("x")).is_err());
    }
}
