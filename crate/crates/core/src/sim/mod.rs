//! Simulators with known potential outcomes.
//!
//! Ground truth is keyed by the decision step `t`: entry `(entity, t, mask)`
//! is the outcome `y_{t+1}` had treatment bits `mask` been applied at `t`,
//! starting from the recorded state at `t` and reusing the recorded noise.

pub mod synthetic;
pub mod tumour;

pub use synthetic::{FeatureMode, SyntheticConfig};
pub use tumour::TumourParams;

use crate::data::{mask_to_bits, DataError, Dataset, PlanStep, Trajectory};
use crate::json;
use crate::seeds::{self, Stream};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    Invalid(String),
    #[error("no ground truth for entity `{entity}` at t={t}")]
    MissingEntry { entity: String, t: usize },
    #[error("rollout of {len} steps from t={t} exceeds the {available} simulated steps of `{entity}`")]
    BeyondHorizon { entity: String, t: usize, len: usize, available: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Normal,
    /// Volume driven to the floor.
    Recovered,
    /// Volume reached the cap; the trajectory ends here.
    Terminal,
}

/// State after one simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub y: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SimModel {
    Tumour(TumourParams),
    Synthetic(SyntheticConfig),
}

impl SimModel {
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            SimModel::Tumour(p) => p.validate(),
            SimModel::Synthetic(c) => c.validate(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            SimModel::Tumour(_) => 2,
            SimModel::Synthetic(c) => c.k,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SimModel::Tumour(p) => p.seed,
            SimModel::Synthetic(c) => c.seed,
        }
    }

    pub fn advance(&self, x: &[f64], y: f64, a: &[u8], v: &[Vec<f64>], noise: &[f64]) -> Outcome {
        match self {
            SimModel::Tumour(p) => p.advance(y, x[0], a, v, noise[0]),
            SimModel::Synthetic(c) => c.advance(x, y, a, v, noise),
        }
    }

    /// Outcomes `y_{t+1}, .., y_{t+len}` when `plan` is applied from step `t` on.
    /// Once a step is terminal the outcome stays at its capped value.
    pub fn rollout(&self, traj: &Trajectory, noise: &[Vec<f64>], t: usize, plan: &[PlanStep]) -> Result<Vec<f64>, SimError> {
        if t == 0 || t > traj.len() || t - 1 + plan.len() > noise.len() {
            return Err(SimError::BeyondHorizon {
                entity: traj.entity_id.clone(),
                t,
                len: plan.len(),
                available: noise.len().min(traj.len()),
            });
        }
        let start = &traj.steps[t - 1];
        let (mut x, mut y) = (start.x.clone(), start.y);
        let mut out = Vec::with_capacity(plan.len());
        let mut stopped = false;
        for (j, step) in plan.iter().enumerate() {
            if !stopped {
                let o = self.advance(&x, y, &step.a, &step.v, &noise[t - 1 + j]);
                stopped = o.status == Status::Terminal;
                x = o.x;
                y = o.y;
            }
            out.push(y);
        }
        Ok(out)
    }

    /// Name used for the RMSE normaliser and recommendation objective.
    pub fn minimises_outcome(&self) -> bool {
        matches!(self, SimModel::Tumour(_))
    }
}

/// Recorded randomness needed to replay any counterfactual rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub schema_version: u32,
    pub simulator: SimModel,
    /// Per-entity noise, one vector per simulated step.
    pub noise: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Replay {
    pub fn rollout(&self, traj: &Trajectory, t: usize, plan: &[PlanStep]) -> Result<Vec<f64>, SimError> {
        let noise = self.noise.get(&traj.entity_id).ok_or_else(|| SimError::MissingEntry {
            entity: traj.entity_id.clone(),
            t,
        })?;
        self.simulator.rollout(traj, noise, t, plan)
    }
}

/// Potential outcomes of every treatment setting at every recorded step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthTable {
    pub k: usize,
    entries: BTreeMap<(String, usize), Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroundTruthRow {
    entity_id: String,
    t: usize,
    a_mask: u32,
    y: f64,
}

impl GroundTruthTable {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: BTreeMap::new(),
        }
    }

    /// `outcomes[mask]` for all `2^K` masks.
    pub fn insert(&mut self, entity: &str, t: usize, outcomes: Vec<f64>) {
        assert_eq!(outcomes.len(), 1 << self.k, "one outcome per treatment setting");
        self.entries.insert((entity.to_string(), t), outcomes);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &(String, usize)> {
        self.entries.keys()
    }

    pub fn outcomes(&self, entity: &str, t: usize) -> Result<&[f64], SimError> {
        self.entries
            .get(&(entity.to_string(), t))
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::MissingEntry {
                entity: entity.to_string(),
                t,
            })
    }

    pub fn potential(&self, entity: &str, t: usize, mask: u32) -> Result<f64, SimError> {
        Ok(self.outcomes(entity, t)?[mask as usize])
    }

    /// `Y[e_k] - Y[0]`.
    pub fn cate(&self, entity: &str, t: usize, k: usize) -> Result<f64, SimError> {
        let y = self.outcomes(entity, t)?;
        Ok(y[1 << k] - y[0])
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        for ((entity, t), ys) in &self.entries {
            for (mask, &y) in ys.iter().enumerate() {
                let row = GroundTruthRow {
                    entity_id: entity.clone(),
                    t: *t,
                    a_mask: mask as u32,
                    y,
                };
                json::write_compact(&mut w, &row)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: std::io::Read>(r: R, k: usize) -> Result<Self, SimError> {
        let mut partial: BTreeMap<(String, usize), Vec<Option<f64>>> = BTreeMap::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: GroundTruthRow = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let slot = partial.entry((row.entity_id, row.t)).or_insert_with(|| vec![None; 1 << k]);
            let cell = slot.get_mut(row.a_mask as usize).ok_or_else(|| DataError::Malformed {
                line: i + 1,
                reason: format!("mask {} out of range for K={k}", row.a_mask),
            })?;
            *cell = Some(row.y);
        }
        let mut table = Self::new(k);
        for ((entity, t), ys) in partial {
            let ys: Option<Vec<f64>> = ys.into_iter().collect();
            let ys = ys.ok_or_else(|| SimError::MissingEntry { entity: entity.clone(), t })?;
            table.entries.insert((entity, t), ys);
        }
        Ok(table)
    }
}

/// `(Y[a] - Y[0]) - Σ_k a_k (Y[e_k] - Y[0])`, straight from the table.
pub fn ground_truth_interaction(table: &GroundTruthTable, entity: &str, t: usize, a: &[u8]) -> Result<f64, SimError> {
    let y = table.outcomes(entity, t)?;
    let mask = crate::data::treatment_mask(a) as usize;
    let mut single = 0.0;
    for (k, &bit) in a.iter().enumerate() {
        if bit == 1 {
            single += y[1 << k] - y[0];
        }
    }
    Ok((y[mask] - y[0]) - single)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    pub truth: GroundTruthTable,
    pub replay: Replay,
}

pub fn simulate(model: &SimModel) -> Result<Simulation, SimError> {
    model.validate()?;
    let (n, prefix) = match model {
        SimModel::Tumour(p) => (p.patients, "patient"),
        SimModel::Synthetic(c) => (c.entities, "entity"),
    };
    let k = model.k();
    let mut trajectories = Vec::with_capacity(n);
    let mut noise = BTreeMap::new();
    let mut truth = GroundTruthTable::new(k);
    for i in 0..n {
        let mut rng = seeds::rng(model.seed(), Stream::Entity(i as u32));
        let id = format!("{prefix}-{i:05}");
        let (traj, eps) = match model {
            SimModel::Tumour(p) => p.patient(id, &mut rng),
            SimModel::Synthetic(c) => c.entity(id, &mut rng),
        };
        for (idx, step) in traj.steps.iter().enumerate() {
            let ys = (0..1u32 << k)
                .map(|m| model.advance(&step.x, step.y, &mask_to_bits(m, k), &step.v, &eps[idx]).y)
                .collect();
            truth.insert(&traj.entity_id, idx + 1, ys);
        }
        noise.insert(traj.entity_id.clone(), eps);
        trajectories.push(traj);
    }
    Ok(Simulation {
        dataset: Dataset::new(trajectories)?,
        truth,
        replay: Replay {
            schema_version: 1,
            simulator: model.clone(),
            noise,
        },
    })
}

/// Sidecar locations next to a dataset file `d.jsonl`: `d.gt.jsonl` and `d.replay.json`.
pub fn sidecar_paths(dataset: &Path) -> (PathBuf, PathBuf) {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = dataset.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}.gt.jsonl")), dir.join(format!("{stem}.replay.json")))
}

pub fn save_simulation(sim: &Simulation, dataset_path: &Path) -> Result<(), SimError> {
    crate::data::save_dataset(&sim.dataset, dataset_path)?;
    let (gt, replay) = sidecar_paths(dataset_path);
    sim.truth.write(BufWriter::new(File::create(gt)?))?;
    let mut f = BufWriter::new(File::create(replay)?);
    json::write_compact(&mut f, &sim.replay)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Loads the sidecars of `dataset_path` if both exist.
pub fn load_sidecars(dataset_path: &Path) -> Result<Option<(GroundTruthTable, Replay)>, SimError> {
    let (gt, replay) = sidecar_paths(dataset_path);
    if !gt.exists() || !replay.exists() {
        return Ok(None);
    }
    let replay: Replay = serde_json::from_reader(BufReader::new(File::open(replay)?))?;
    let truth = GroundTruthTable::read(File::open(gt)?, replay.simulator.k())?;
    Ok(Some((truth, replay)))
}

/// Mean over treatments of the Pearson correlation between tumour diameter and the treatment bit.
pub fn selection_bias(dataset: &Dataset) -> f64 {
    let k = dataset.dims().map_or(0, |d| d.k);
    let d: Vec<f64> = dataset
        .trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| tumour::diameter(s.y)))
        .collect();
    let mut total = 0.0;
    for j in 0..k {
        let a: Vec<f64> = dataset
            .trajectories
            .iter()
            .flat_map(|t| t.steps.iter().map(move |s| s.a[j] as f64))
            .collect();
        total += pearson(&d, &a);
    }
    total / k.max(1) as f64
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
