//! Checkpoint directories: `manifest.json`, `params.bin` and `norm.json`.

use crate::data::NormStats;
use crate::json;
use crate::model::Forecaster;
use crate::net::checkpoint::{from_blob, param_entries, to_blob, BlobError, ParamEntry};
use crate::net::{ModelConfig, NetError};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";
const NORM: &str = "norm.json";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("checkpoint {what} version {found} is not supported (expected {expected})")]
    Version { what: &'static str, found: u32, expected: u32 },
    #[error("configuration hash mismatch: manifest says {stored}, contents give {computed}")]
    ConfigHash { stored: String, computed: String },
    #[error("{file} digest mismatch: manifest says {stored}, file gives {computed}")]
    Digest { file: String, stored: String, computed: String },
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// sha256 of the compact JSON of `[model_config, train_config]`.
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub best_epoch: usize,
    pub params: Vec<ParamEntry>,
    pub blob: BlobInfo,
    pub norm_file: String,
}

impl Manifest {
    /// Identifies the trained weights; equal for bit-identical checkpoints.
    pub fn model_fingerprint(&self) -> &str {
        &self.blob.sha256
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub model: Forecaster,
}

pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let line = json::to_line(&(model, train)).expect("configs serialise");
    hex::encode(Sha256::digest(line.as_bytes()))
}

impl Bundle {
    pub fn new(model: Forecaster, train_config: TrainConfig, dataset_fingerprint: String, best_epoch: usize) -> Self {
        let blob = to_blob(&model.net);
        let model_config = model.net.config.clone();
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            format_version: FORMAT_VERSION,
            config_hash: config_hash(&model_config, &train_config),
            model_config,
            train_config,
            dataset_fingerprint,
            best_epoch,
            params: param_entries(&model.net),
            blob: BlobInfo {
                file: PARAMS.into(),
                bytes: blob.len(),
                sha256: hex::encode(Sha256::digest(&blob)),
            },
            norm_file: NORM.into(),
        };
        Self { manifest, model }
    }

    pub fn save(&self, dir: &Path) -> Result<(), BundleError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write(&dir.join(PARAMS), &to_blob(&self.model.net))?;
        write(&dir.join(NORM), json::to_pretty(&self.model.norm).expect("stats serialise").as_bytes())?;
        write(&dir.join(MANIFEST), json::to_pretty(&self.manifest).expect("manifest serialises").as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join(MANIFEST);
        let manifest: Manifest = read_json(&path)?;
        for (what, found, expected) in [
            ("schema", manifest.schema_version, SCHEMA_VERSION),
            ("format", manifest.format_version, FORMAT_VERSION),
        ] {
            if found != expected {
                return Err(BundleError::Version { what, found, expected });
            }
        }
        let computed = config_hash(&manifest.model_config, &manifest.train_config);
        if computed != manifest.config_hash {
            return Err(BundleError::ConfigHash {
                stored: manifest.config_hash.clone(),
                computed,
            });
        }
        let blob_path = dir.join(&manifest.blob.file);
        let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
        if blob.len() != manifest.blob.bytes {
            return Err(BlobError::Length {
                expected: manifest.blob.bytes,
                got: blob.len(),
            }
            .into());
        }
        let digest = hex::encode(Sha256::digest(&blob));
        if digest != manifest.blob.sha256 {
            return Err(BundleError::Digest {
                file: manifest.blob.file.clone(),
                stored: manifest.blob.sha256.clone(),
                computed: digest,
            });
        }
        let net = from_blob(manifest.model_config.clone(), &manifest.params, &blob)?;
        let norm: NormStats = read_json(&dir.join(&manifest.norm_file))?;
        Ok(Self {
            model: Forecaster::new(net, norm)?,
            manifest,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BundleError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BundleError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| BundleError::Json {
        path: path.display().to_string(),
        source,
    })
}
