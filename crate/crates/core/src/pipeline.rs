//! Split, normalise, train and package a checkpoint in one call.

use crate::bundle::{Bundle, Manifest};
use crate::data::{dataset_fingerprint, fit_stats, normalize, split, DataError, Dataset, NormStats};
use crate::model::Forecaster;
use crate::net::{ModelConfig, NetError};
use crate::train::{train, EpochLog, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// `d_x`, `d_v` and `k` are replaced by the dataset's dimensions.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub norm: NormStats,
}

pub fn prepare(data: &Dataset, config: &TrainConfig) -> Result<Prepared, PipelineError> {
    let (train, valid, test) = split(data, config.split, config.seed)?;
    let norm = fit_stats(&train)?;
    Ok(Prepared { train, valid, test, norm })
}

pub struct Fitted {
    pub bundle: Bundle,
    pub log: Vec<EpochLog>,
    pub prepared: Prepared,
}

pub fn fit(data: &Dataset, model: &ModelConfig, config: &TrainConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<Fitted, PipelineError> {
    let dims = data.dims().ok_or(TrainError::Empty)?;
    let model = ModelConfig {
        d_x: dims.d_x,
        d_v: dims.d_v,
        k: dims.k,
        ..model.clone()
    };
    let prepared = prepare(data, config)?;
    let out = train(
        &normalize(&prepared.train, &prepared.norm),
        &normalize(&prepared.valid, &prepared.norm),
        &model,
        config,
        on_epoch,
    )?;
    let forecaster = Forecaster::new(out.net, prepared.norm.clone())?;
    Ok(Fitted {
        bundle: Bundle::new(forecaster, config.clone(), dataset_fingerprint(data), out.best_epoch),
        log: out.log,
        prepared,
    })
}

/// The held-out split when `data` is the training dataset, otherwise all of `data`.
pub fn evaluation_set(data: &Dataset, manifest: &Manifest) -> Result<Dataset, PipelineError> {
    if dataset_fingerprint(data) == manifest.dataset_fingerprint {
        Ok(prepare(data, &manifest.train_config)?.test)
    } else {
        Ok(data.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimModel, SyntheticConfig};

    #[test]
    fn fit_then_evaluation_set_is_the_test_split() {
        let sim = simulate(&SimModel::Synthetic(SyntheticConfig { entities: 20, steps: 6, ..Default::default() })).unwrap();
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let model = ModelConfig { d_r: 4, d_z: 2, tau_max: 2, outcome_hidden: 3, ..Default::default() };
        let f = fit(&sim.dataset, &model, &cfg, |_| {}).unwrap();
        assert_eq!(f.bundle.manifest.model_config.d_x, 2);
        let test = evaluation_set(&sim.dataset, &f.bundle.manifest).unwrap();
        assert_eq!(test, f.prepared.test);
        let other = Dataset::new(sim.dataset.trajectories[..3].to_vec()).unwrap();
        assert_eq!(evaluation_set(&other, &f.bundle.manifest).unwrap(), other);
    }

    #[test]
    fn config_defaults_fill_missing_sections() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"train":{"epochs":3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.model, ModelConfig::default());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"trian":{}}"#).is_err());
    }
}
