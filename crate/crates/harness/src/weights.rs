//! Binary weight files: magic, little-endian `u32` header length, a JSON
//! header describing the tensors, then every tensor as little-endian `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use siamese_core::model::{
    BackboneConfig, ModelError, ParamSource, Parameters, Tensor, PARAMS_VERSION,
};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SIAMWTS\0";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a weights file (bad magic)")]
    Magic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("incompatible weights version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tensor `{layer}` is truncated: {needed} bytes needed, {available} left")]
    Truncated {
        layer: String,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    source: ParamSource,
    config: BackboneConfig,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(params: &Parameters<f32>) -> Vec<u8> {
    let header = Header {
        version: params.version,
        source: params.source,
        config: params.config.clone(),
        tensors: params
            .tensors
            .iter()
            .map(|t| TensorHeader {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &params.tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a weights file. When `expected` is given the tensors are checked
/// against its layout instead of the stored configuration.
pub fn from_bytes(
    bytes: &[u8],
    expected: Option<&BackboneConfig>,
) -> Result<Parameters<f32>, WeightsError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(WeightsError::Magic);
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| {
        WeightsError::Header(format!("header of {len} bytes runs past end of file"))
    })?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| WeightsError::Header(e.to_string()))?;
    if header.version != PARAMS_VERSION {
        return Err(WeightsError::Version {
            found: header.version,
            expected: PARAMS_VERSION,
        });
    }
    let mut rest = &bytes[12 + len..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let needed = 4 * t.shape.iter().product::<usize>();
        if rest.len() < needed {
            return Err(WeightsError::Truncated {
                layer: t.name,
                needed,
                available: rest.len(),
            });
        }
        let data = rest[..needed]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        rest = &rest[needed..];
        tensors.push(Tensor {
            name: t.name,
            shape: t.shape,
            data,
        });
    }
    if !rest.is_empty() {
        return Err(WeightsError::Trailing(rest.len()));
    }
    Ok(Parameters::from_tensors(
        expected.unwrap_or(&header.config),
        tensors,
        header.source,
    )?)
}

pub fn export_weights(params: &Parameters<f32>, path: &Path) -> Result<(), WeightsError> {
    fs::write(path, to_bytes(params)).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn import_weights(
    path: &Path,
    expected: Option<&BackboneConfig>,
) -> Result<Parameters<f32>, WeightsError> {
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, expected)
}

/// Hex SHA-256 of the serialized weights.
pub fn digest(params: &Parameters<f32>) -> String {
    hex::encode(Sha256::digest(to_bytes(params)))
}
