//! Parameter manifest and flat little-endian blob.

use super::{ModelConfig, TcfNet};
use crate::autodiff::{ParamGroup, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BlobError {
    #[error("blob holds {got} bytes, manifest needs {expected}")]
    Length { expected: usize, got: usize },
    #[error("parameter {index}: manifest has `{expected}`, model has `{got}`")]
    Layout { index: usize, expected: String, got: String },
    #[error("model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

pub fn param_entries(net: &TcfNet) -> Vec<ParamEntry> {
    net.store
        .iter()
        .map(|p| ParamEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape().to_vec(),
        })
        .collect()
}

/// All parameter values in manifest order as little-endian `f64`.
pub fn to_blob(net: &TcfNet) -> Vec<u8> {
    net.store
        .iter()
        .flat_map(|p| p.value.values().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// Rebuilds a network whose layout must match `entries` exactly.
pub fn from_blob(config: ModelConfig, entries: &[ParamEntry], blob: &[u8]) -> Result<TcfNet, BlobError> {
    let mut net = TcfNet::new(config, 0).map_err(|e| BlobError::Config(e.to_string()))?;
    let expected = param_entries(&net);
    if expected.len() != entries.len() {
        return Err(BlobError::Layout {
            index: expected.len().min(entries.len()),
            expected: format!("{} parameters", entries.len()),
            got: format!("{} parameters", expected.len()),
        });
    }
    for (i, (e, m)) in entries.iter().zip(&expected).enumerate() {
        if e != m {
            return Err(BlobError::Layout {
                index: i,
                expected: format!("{} {:?}", e.name, e.shape),
                got: format!("{} {:?}", m.name, m.shape),
            });
        }
    }
    let need = net.store.scalar_count() * 8;
    if blob.len() != need {
        return Err(BlobError::Length { expected: need, got: blob.len() });
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for p in net.store.params_mut() {
        let v: Vec<f64> = values.by_ref().take(p.value.len()).collect();
        p.value = Tensor::matrix(p.value.rows(), p.value.cols(), v);
    }
    Ok(net)
}
