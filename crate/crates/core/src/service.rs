//! Request and response types shared by the command line and the HTTP service.

use crate::bundle::{Bundle, Manifest};
use crate::data::{Dataset, PlanStep, TimeStep};
use crate::effects::{self, Candidate, EffectsError, Goal, RankedPlan};
use crate::net::{ModelConfig, NetError, OutcomeSet};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("horizon {tau} exceeds the model's tau_max {tau_max}")]
    Horizon { tau: usize, tau_max: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Net(NetError),
}

impl From<NetError> for ServiceError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Horizon { tau, tau_max } => ServiceError::Horizon { tau, tau_max },
            other => ServiceError::Net(other),
        }
    }
}

impl From<EffectsError> for ServiceError {
    fn from(e: EffectsError) -> Self {
        match e {
            EffectsError::Net(n) => n.into(),
            other => ServiceError::Invalid(other.to_string()),
        }
    }
}

/// Treatment bits (and optionally features) for one plan step, 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub offset: usize,
    pub a: Vec<u8>,
    /// `D_v x K`; defaults to the last observed features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<Vec<f64>>>,
}

/// Which history to condition on: a known entity or an inline one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<TimeStep>>,
    /// Condition on steps `1..=t`; defaults to the whole history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRequest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(flatten)]
    pub subject: Subject,
    pub horizon: usize,
    /// Steps not listed are untreated.
    #[serde(default)]
    pub plan: Vec<PlanEntry>,
    #[serde(default)]
    pub literal_interaction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub step: usize,
    pub t: usize,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub schema_version: u32,
    pub entity_id: Option<String>,
    pub t: usize,
    pub horizon: usize,
    pub plan: Vec<PlanStep>,
    pub forecast: Vec<ForecastPoint>,
    /// Outcome-head decomposition for the first planned treatment.
    pub outcome_set: OutcomeSet,
    /// `Ŷ[e_k] - Ŷ[a_0]` at the first step.
    pub single_effects: Vec<f64>,
    /// Each treatment held for the whole horizon against none, at the final step.
    pub cate: Vec<f64>,
    pub interaction: f64,
    pub literal_interaction: bool,
    pub model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(flatten)]
    pub subject: Subject,
    pub horizon: usize,
    /// Defaults to every treatment option at every offset.
    #[serde(default)]
    pub candidates: Option<Vec<Vec<PlanEntry>>>,
    #[serde(default = "default_goal")]
    pub goal: Goal,
}

fn default_goal() -> Goal {
    Goal::Minimise
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub schema_version: u32,
    pub entity_id: Option<String>,
    pub t: usize,
    pub horizon: usize,
    pub goal: Goal,
    pub ranked: Vec<RankedPlan>,
    pub model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub schema_version: u32,
    pub k: usize,
    pub tau_max: usize,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySummary {
    pub entity_id: String,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityList {
    pub schema_version: u32,
    pub entities: Vec<EntitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityHistory {
    pub schema_version: u32,
    pub entity_id: String,
    pub steps: Vec<TimeStep>,
}

/// Immutable model plus the dataset its entities come from.
#[derive(Debug, Clone)]
pub struct Engine {
    pub bundle: Bundle,
    pub data: Dataset,
}

impl Engine {
    pub fn new(bundle: Bundle, data: Dataset) -> Self {
        Self { bundle, data }
    }

    fn manifest(&self) -> &Manifest {
        &self.bundle.manifest
    }

    pub fn model_info(&self) -> ModelInfo {
        let m = self.manifest();
        ModelInfo {
            schema_version: SCHEMA_VERSION,
            k: m.model_config.k,
            tau_max: m.model_config.tau_max,
            model_config: m.model_config.clone(),
            train_config: m.train_config.clone(),
            config_hash: m.config_hash.clone(),
            dataset_fingerprint: m.dataset_fingerprint.clone(),
            model_fingerprint: m.model_fingerprint().to_string(),
        }
    }

    pub fn entities(&self) -> EntityList {
        EntityList {
            schema_version: SCHEMA_VERSION,
            entities: self
                .data
                .trajectories
                .iter()
                .map(|t| EntitySummary {
                    entity_id: t.entity_id.clone(),
                    steps: t.len(),
                })
                .collect(),
        }
    }

    pub fn history(&self, entity_id: &str) -> Result<EntityHistory, ServiceError> {
        let tr = self.data.find(entity_id).ok_or_else(|| ServiceError::UnknownEntity(entity_id.into()))?;
        Ok(EntityHistory {
            schema_version: SCHEMA_VERSION,
            entity_id: tr.entity_id.clone(),
            steps: tr.steps.clone(),
        })
    }

    /// Conditioning steps `1..=t` and `t`.
    fn resolve(&self, s: &Subject) -> Result<(Vec<TimeStep>, usize), ServiceError> {
        let steps = match (&s.entity_id, &s.history) {
            (Some(id), None) => self.data.find(id).ok_or_else(|| ServiceError::UnknownEntity(id.clone()))?.steps.clone(),
            (None, Some(h)) => h.clone(),
            _ => return Err(ServiceError::Invalid("give exactly one of `entity_id` and `history`".into())),
        };
        let t = s.t.unwrap_or(steps.len());
        if t == 0 || t > steps.len() {
            return Err(ServiceError::Invalid(format!("t = {t} outside the history 1..={}", steps.len())));
        }
        let dims = self.bundle.model.norm.dims;
        if let Some((i, _)) = steps[..t].iter().enumerate().find(|(_, st)| st.dims() != dims || st.v.iter().any(|r| r.len() != dims.k)) {
            return Err(ServiceError::Invalid(format!(
                "history step {} does not have d_x={}, d_v={}, k={}",
                i + 1,
                dims.d_x,
                dims.d_v,
                dims.k
            )));
        }
        Ok((steps[..t].to_vec(), t))
    }

    fn check_horizon(&self, horizon: usize) -> Result<(), ServiceError> {
        let tau_max = self.bundle.model.tau_max();
        if horizon == 0 {
            return Err(ServiceError::Invalid("horizon must be at least 1".into()));
        }
        if horizon > tau_max {
            return Err(ServiceError::Horizon { tau: horizon, tau_max });
        }
        Ok(())
    }

    fn build_plan(&self, entries: &[PlanEntry], horizon: usize, last_v: &[Vec<f64>]) -> Result<Vec<PlanStep>, ServiceError> {
        let k = self.bundle.model.k();
        let d_v = last_v.len();
        let mut plan: Vec<PlanStep> = (0..horizon)
            .map(|_| PlanStep {
                a: vec![0; k],
                v: last_v.to_vec(),
            })
            .collect();
        let mut seen = vec![false; horizon];
        for e in entries {
            if e.offset == 0 || e.offset > horizon {
                return Err(ServiceError::Invalid(format!("plan offset {} outside 1..={horizon}", e.offset)));
            }
            if std::mem::replace(&mut seen[e.offset - 1], true) {
                return Err(ServiceError::Invalid(format!("plan offset {} given twice", e.offset)));
            }
            if e.a.len() != k || e.a.iter().any(|&b| b > 1) {
                return Err(ServiceError::Invalid(format!("plan offset {}: `a` must be {k} bits", e.offset)));
            }
            let step = &mut plan[e.offset - 1];
            step.a = e.a.clone();
            if let Some(v) = &e.v {
                if v.len() != d_v || v.iter().any(|r| r.len() != k || r.iter().any(|x| !x.is_finite())) {
                    return Err(ServiceError::Invalid(format!("plan offset {}: `v` must be {d_v} x {k} finite values", e.offset)));
                }
                step.v = v.clone();
            }
        }
        Ok(plan)
    }

    fn check_version(v: u32) -> Result<(), ServiceError> {
        if v != SCHEMA_VERSION {
            return Err(ServiceError::Invalid(format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})")));
        }
        Ok(())
    }

    pub fn forecast(&self, req: &ForecastRequest) -> Result<ForecastResponse, ServiceError> {
        Self::check_version(req.schema_version)?;
        self.check_horizon(req.horizon)?;
        let (steps, t) = self.resolve(&req.subject)?;
        let last_v = &steps[t - 1].v;
        let plan = self.build_plan(&req.plan, req.horizon, last_v)?;
        let model = &self.bundle.model;
        let rep = model.representations(&steps)?.pop().expect("t >= 1");
        let ys = model.forecast(&rep, &plan)?;
        let features: Vec<Vec<Vec<f64>>> = plan.iter().map(|p| p.v.clone()).collect();
        let cate = (0..model.k())
            .map(|k| effects::estimate_cate(model, "", t, &rep, k, &features).map(|c| c.delta))
            .collect::<Result<Vec<_>, _>>()?;
        let est = effects::estimate_interaction(model, "", t, &rep, &plan[0].a, req.literal_interaction)?;
        Ok(ForecastResponse {
            schema_version: SCHEMA_VERSION,
            entity_id: req.subject.entity_id.clone(),
            t,
            horizon: req.horizon,
            forecast: ys
                .iter()
                .enumerate()
                .map(|(j, &y)| ForecastPoint { step: j + 1, t: t + j + 1, y })
                .collect(),
            plan,
            outcome_set: est.outcomes,
            single_effects: est.single_effects,
            cate,
            interaction: est.delta_ci,
            literal_interaction: req.literal_interaction,
            model_fingerprint: self.manifest().model_fingerprint().to_string(),
        })
    }

    pub fn recommend(&self, req: &RecommendRequest) -> Result<RecommendResponse, ServiceError> {
        Self::check_version(req.schema_version)?;
        self.check_horizon(req.horizon)?;
        let (steps, t) = self.resolve(&req.subject)?;
        let last_v = &steps[t - 1].v;
        let model = &self.bundle.model;
        let plans: Vec<Vec<PlanStep>> = match &req.candidates {
            Some(c) => c.iter().map(|e| self.build_plan(e, req.horizon, last_v)).collect::<Result<_, _>>()?,
            None => {
                let features = vec![last_v.clone(); req.horizon];
                effects::default_candidates(model.k(), req.horizon)
                    .iter()
                    .map(|c: &Candidate| c.plan(model.k(), &features))
                    .collect()
            }
        };
        let rep = model.representations(&steps)?.pop().expect("t >= 1");
        Ok(RecommendResponse {
            schema_version: SCHEMA_VERSION,
            entity_id: req.subject.entity_id.clone(),
            t,
            horizon: req.horizon,
            goal: req.goal,
            ranked: effects::recommend_treatment(model, &rep, &plans, req.goal)?,
            model_fingerprint: self.manifest().model_fingerprint().to_string(),
        })
    }
}
