//! Effect estimates, treatment recommendation and evaluation against simulator ground truth.

use crate::data::{mask_to_bits, treatment_mask, Dataset, PlanStep, Trajectory};
use crate::model::Forecaster;
use crate::net::{NetError, OutcomeSet};
use crate::sim::{GroundTruthTable, Replay, SimError, SimModel};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

type Result<T> = std::result::Result<T, EffectsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateEstimate {
    pub entity_id: String,
    pub t: usize,
    /// Zero-based treatment index.
    pub k: usize,
    pub tau: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEstimate {
    pub entity_id: String,
    pub t: usize,
    pub a: Vec<u8>,
    pub delta_ci: f64,
    /// `Ŷ[e_k] - Ŷ[a_0]` per treatment.
    pub single_effects: Vec<f64>,
    pub outcomes: OutcomeSet,
}

fn constant_plan(a: &[u8], features: &[Vec<Vec<f64>>]) -> Vec<PlanStep> {
    features
        .iter()
        .map(|v| PlanStep {
            a: a.to_vec(),
            v: v.clone(),
        })
        .collect()
}

/// Forecast at `t + τ` under `treated` held for `τ = features.len()` steps, minus the same under `control`.
pub fn cate_between(model: &Forecaster, rep: &[f64], treated: &[u8], control: &[u8], features: &[Vec<Vec<f64>>]) -> Result<f64> {
    let plans = [constant_plan(treated, features), constant_plan(control, features)];
    let ys = model.forecast_many(&[rep.to_vec(), rep.to_vec()], &plans)?;
    let last = features.len() - 1;
    Ok(ys[0][last] - ys[1][last])
}

/// Effect of treatment `k` alone against no treatment, at horizon `features.len()`.
pub fn estimate_cate(
    model: &Forecaster,
    entity_id: &str,
    t: usize,
    rep: &[f64],
    k: usize,
    features: &[Vec<Vec<f64>>],
) -> Result<CateEstimate> {
    let kk = model.k();
    if k >= kk {
        return Err(EffectsError::Invalid(format!("treatment index {k} out of range 0..{kk}")));
    }
    if features.is_empty() {
        return Err(EffectsError::Invalid("horizon must be at least 1".into()));
    }
    let mut one_hot = vec![0u8; kk];
    one_hot[k] = 1;
    Ok(CateEstimate {
        entity_id: entity_id.into(),
        t,
        k,
        tau: features.len(),
        delta: cate_between(model, rep, &one_hot, &vec![0; kk], features)?,
    })
}

/// `(Ŷ[a] - Ŷ[a_0]) - Σ_k w_k (Ŷ[e_k] - Ŷ[a_0])`, with `w_k = a_k`, or `w_k = 1` when `literal`.
pub fn interaction_from_outcomes(set: &OutcomeSet, literal: bool) -> f64 {
    let singles: f64 = set
        .single
        .iter()
        .zip(&set.a)
        .filter(|(_, &bit)| literal || bit == 1)
        .map(|(s, _)| s - set.none)
        .sum();
    (set.mixed - set.none) - singles
}

pub fn estimate_interaction(
    model: &Forecaster,
    entity_id: &str,
    t: usize,
    rep: &[f64],
    a: &[u8],
    literal: bool,
) -> Result<InteractionEstimate> {
    let outcomes = model.outcome_set(rep, a)?;
    Ok(InteractionEstimate {
        entity_id: entity_id.into(),
        t,
        a: a.to_vec(),
        delta_ci: interaction_from_outcomes(&outcomes, literal),
        single_effects: outcomes.single.iter().map(|s| s - outcomes.none).collect(),
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Minimise,
    Maximise,
}

impl Goal {
    pub fn for_simulator(sim: &SimModel) -> Self {
        if sim.minimises_outcome() { Goal::Minimise } else { Goal::Maximise }
    }
}

/// A treatment option started at one step of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Treatment bitmask, bit `k` for treatment `k`.
    pub option: u32,
    /// 1-based plan step at which the option is applied; `None` for the untreated plan.
    pub offset: Option<usize>,
}

impl Candidate {
    /// Reads the first treated step of a plan.
    pub fn of_plan(plan: &[PlanStep]) -> Self {
        plan.iter()
            .enumerate()
            .map(|(i, s)| (i, treatment_mask(&s.a)))
            .find(|(_, m)| *m != 0)
            .map_or(Candidate { option: 0, offset: None }, |(i, m)| Candidate {
                option: m,
                offset: Some(i + 1),
            })
    }

    pub fn plan(&self, k: usize, features: &[Vec<Vec<f64>>]) -> Vec<PlanStep> {
        features
            .iter()
            .enumerate()
            .map(|(i, v)| PlanStep {
                a: if self.offset == Some(i + 1) { mask_to_bits(self.option, k) } else { vec![0; k] },
                v: v.clone(),
            })
            .collect()
    }
}

/// All `2^K` options at every offset `1..=horizon`, the untreated plan once.
pub fn default_candidates(k: usize, horizon: usize) -> Vec<Candidate> {
    let mut out = vec![Candidate { option: 0, offset: None }];
    for option in 1..1u32 << k {
        for offset in 1..=horizon {
            out.push(Candidate {
                option,
                offset: Some(offset),
            });
        }
    }
    out
}

fn plan_code(plan: &[PlanStep]) -> Vec<u32> {
    plan.iter().map(|s| treatment_mask(&s.a)).collect()
}

/// Orders plans best first by their score; ties go to the lexicographically smaller mask sequence.
pub fn rank_order(plans: &[Vec<PlanStep>], scores: &[f64], goal: Goal) -> Vec<usize> {
    let codes: Vec<Vec<u32>> = plans.iter().map(|p| plan_code(p)).collect();
    let mut idx: Vec<usize> = (0..plans.len()).collect();
    idx.sort_by(|&i, &j| {
        let by_score = match goal {
            Goal::Minimise => scores[i].total_cmp(&scores[j]),
            Goal::Maximise => scores[j].total_cmp(&scores[i]),
        };
        by_score.then_with(|| codes[i].cmp(&codes[j])).then(Ordering::Equal)
    });
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPlan {
    pub rank: usize,
    pub candidate: Candidate,
    pub plan: Vec<PlanStep>,
    pub forecast: Vec<f64>,
    /// Forecast at the final plan step.
    pub score: f64,
}

pub fn recommend_treatment(model: &Forecaster, rep: &[f64], plans: &[Vec<PlanStep>], goal: Goal) -> Result<Vec<RankedPlan>> {
    if plans.is_empty() {
        return Err(EffectsError::Invalid("no candidate plans".into()));
    }
    let forecasts = model.forecast_many(&vec![rep.to_vec(); plans.len()], plans)?;
    let scores: Vec<f64> = forecasts.iter().map(|f| *f.last().expect("nonempty plan")).collect();
    Ok(rank_order(plans, &scores, goal)
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankedPlan {
            rank: r + 1,
            candidate: Candidate::of_plan(&plans[i]),
            plan: plans[i].clone(),
            forecast: forecasts[i].clone(),
            score: scores[i],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub h: usize,
    pub n: usize,
    pub rmse_pct: f64,
    pub mae_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    /// At horizon `τ`.
    pub rmse_pct: f64,
    pub mae_pct: f64,
    pub per_horizon: Vec<ErrorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentAccuracy {
    pub tr_acc: f64,
    pub trt_acc: f64,
    pub cases: usize,
    pub options: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub tau: usize,
    pub cases: usize,
    pub normalizer: f64,
    pub factual: ErrorSummary,
    pub counterfactual: Option<ErrorSummary>,
    pub treatment: Option<TreatmentAccuracy>,
}

/// Estimates and, where available, ground truth for one `(entity, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityEffects {
    pub entity_id: String,
    pub t: usize,
    pub cate: Vec<f64>,
    pub cate_true: Option<Vec<f64>>,
    /// For all treatments on together.
    pub interaction: f64,
    pub interaction_true: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub tau: usize,
    /// Overrides the default normaliser.
    pub normalizer: Option<f64>,
    pub goal: Option<Goal>,
    pub literal_interaction: bool,
}

impl EvalOptions {
    pub fn at(tau: usize) -> Self {
        Self {
            tau,
            normalizer: None,
            goal: None,
            literal_interaction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub effects: Vec<EntityEffects>,
}

/// `100 · RMSE / normalizer` and the MAE analogue.
pub fn error_pct(pred: &[f64], truth: &[f64], normalizer: f64) -> (f64, f64) {
    let n = pred.len().max(1) as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, y) in pred.iter().zip(truth) {
        se += (p - y) * (p - y);
        ae += (p - y).abs();
    }
    (100.0 * (se / n).sqrt() / normalizer, 100.0 * (ae / n) / normalizer)
}

struct Accumulator {
    pred: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
}

impl Accumulator {
    fn new(tau: usize) -> Self {
        Self {
            pred: vec![Vec::new(); tau],
            truth: vec![Vec::new(); tau],
        }
    }

    fn push(&mut self, pred: &[f64], truth: &[f64]) {
        for h in 0..pred.len() {
            self.pred[h].push(pred[h]);
            self.truth[h].push(truth[h]);
        }
    }

    fn summary(&self, normalizer: f64) -> ErrorSummary {
        let per_horizon: Vec<ErrorRow> = (0..self.pred.len())
            .map(|h| {
                let (rmse_pct, mae_pct) = error_pct(&self.pred[h], &self.truth[h], normalizer);
                ErrorRow {
                    h: h + 1,
                    n: self.pred[h].len(),
                    rmse_pct,
                    mae_pct,
                }
            })
            .collect();
        let last = per_horizon.last().expect("tau >= 1");
        ErrorSummary {
            rmse_pct: last.rmse_pct,
            mae_pct: last.mae_pct,
            per_horizon,
        }
    }
}

const CHUNK: usize = 1024;

fn forecast_chunked(model: &Forecaster, reps: &[Vec<f64>], plans: &[Vec<PlanStep>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(plans.len());
    for (r, p) in reps.chunks(CHUNK).zip(plans.chunks(CHUNK)) {
        out.extend(model.forecast_many(r, p)?);
    }
    Ok(out)
}

fn observed_plan(traj: &Trajectory, t: usize, tau: usize) -> Vec<PlanStep> {
    traj.steps[t - 1..t - 1 + tau]
        .iter()
        .map(|s| PlanStep {
            a: s.a.clone(),
            v: s.v.clone(),
        })
        .collect()
}

/// Every `(trajectory, t)` with `τ` observed outcomes after `t`.
pub fn evaluation_cases(data: &Dataset, tau: usize) -> Vec<(usize, usize)> {
    data.trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, tr)| (1..=tr.len().saturating_sub(tau)).map(move |t| (i, t)))
        .collect()
}

/// Factual errors always; counterfactual errors and recommendation accuracy when `replay` is given;
/// effect ground truth when `table` is given.
pub fn evaluate(
    model: &Forecaster,
    test: &Dataset,
    replay: Option<&Replay>,
    table: Option<&GroundTruthTable>,
    opts: EvalOptions,
) -> Result<Evaluation> {
    let tau = opts.tau;
    if tau == 0 || tau > model.tau_max() {
        return Err(NetError::Horizon {
            tau,
            tau_max: model.tau_max(),
        }
        .into());
    }
    let k = model.k();
    let cases = evaluation_cases(test, tau);
    if cases.is_empty() {
        return Err(EffectsError::Invalid(format!("no test trajectory is longer than tau = {tau}")));
    }
    let normalizer = match (opts.normalizer, replay.map(|r| &r.simulator)) {
        (Some(n), _) => n,
        (None, Some(SimModel::Tumour(p))) => p.cap(),
        _ => test.trajectories.iter().flat_map(|t| &t.steps).map(|s| s.y.abs()).fold(0.0, f64::max),
    };
    if !(normalizer > 0.0) {
        return Err(EffectsError::Invalid(format!("normaliser must be positive, got {normalizer}")));
    }
    let goal = opts
        .goal
        .or_else(|| replay.map(|r| Goal::for_simulator(&r.simulator)))
        .unwrap_or(Goal::Maximise);

    let all_reps: Vec<Vec<Vec<f64>>> = test
        .trajectories
        .iter()
        .map(|tr| model.representations(&tr.steps))
        .collect::<std::result::Result<_, _>>()?;
    let rep = |i: usize, t: usize| all_reps[i][t - 1].clone();

    let mut factual = Accumulator::new(tau);
    let reps: Vec<Vec<f64>> = cases.iter().map(|&(i, t)| rep(i, t)).collect();
    let plans: Vec<Vec<PlanStep>> = cases.iter().map(|&(i, t)| observed_plan(&test.trajectories[i], t, tau)).collect();
    let preds = forecast_chunked(model, &reps, &plans)?;
    for (&(i, t), p) in cases.iter().zip(&preds) {
        let truth: Vec<f64> = test.trajectories[i].steps[t..t + tau].iter().map(|s| s.y).collect();
        factual.push(p, &truth);
    }

    let (counterfactual, treatment) = match replay {
        None => (None, None),
        Some(replay) => {
            let candidates = default_candidates(k, tau);
            let mut cf = Accumulator::new(tau);
            let (mut tr_hits, mut trt_hits) = (0usize, 0usize);
            for chunk in cases.chunks((CHUNK / candidates.len()).max(1)) {
                let mut reps = Vec::new();
                let mut plans = Vec::new();
                for &(i, t) in chunk {
                    let features: Vec<Vec<Vec<f64>>> = observed_plan(&test.trajectories[i], t, tau).into_iter().map(|s| s.v).collect();
                    for c in &candidates {
                        reps.push(rep(i, t));
                        plans.push(c.plan(k, &features));
                    }
                }
                let preds = model.forecast_many(&reps, &plans)?;
                for (ci, &(i, t)) in chunk.iter().enumerate() {
                    let span = ci * candidates.len()..(ci + 1) * candidates.len();
                    let mut truths = Vec::with_capacity(candidates.len());
                    for j in span.clone() {
                        let truth = replay.rollout(&test.trajectories[i], t, &plans[j])?;
                        cf.push(&preds[j], &truth);
                        truths.push(*truth.last().expect("tau >= 1"));
                    }
                    let case_plans = &plans[span.clone()];
                    let scores: Vec<f64> = preds[span].iter().map(|p| *p.last().expect("tau >= 1")).collect();
                    let chosen = candidates[rank_order(case_plans, &scores, goal)[0]];
                    let best = candidates[rank_order(case_plans, &truths, goal)[0]];
                    if chosen.option == best.option {
                        tr_hits += 1;
                        if chosen.offset == best.offset {
                            trt_hits += 1;
                        }
                    }
                }
            }
            let n = cases.len() as f64;
            (
                Some(cf.summary(normalizer)),
                Some(TreatmentAccuracy {
                    tr_acc: tr_hits as f64 / n,
                    trt_acc: trt_hits as f64 / n,
                    cases: cases.len(),
                    options: 1 << k,
                }),
            )
        }
    };

    let all_on = vec![1u8; k];
    let mut effects = Vec::with_capacity(cases.len());
    for &(i, t) in &cases {
        let tr = &test.trajectories[i];
        let est = estimate_interaction(model, &tr.entity_id, t, &all_reps[i][t - 1], &all_on, opts.literal_interaction)?;
        let truth = match table {
            Some(table) => Some(table.outcomes(&tr.entity_id, t)?),
            None => None,
        };
        effects.push(EntityEffects {
            entity_id: tr.entity_id.clone(),
            t,
            cate: est.single_effects,
            cate_true: truth.map(|y| (0..k).map(|j| y[1 << j] - y[0]).collect()),
            interaction: est.delta_ci,
            interaction_true: truth.map(|y| {
                let full = (1usize << k) - 1;
                let singles: f64 = (0..k).map(|j| y[1 << j] - y[0]).sum();
                (y[full] - y[0]) - singles
            }),
        });
    }

    Ok(Evaluation {
        report: MetricsReport {
            schema_version: 1,
            tau,
            cases: cases.len(),
            normalizer,
            factual: factual.summary(normalizer),
            counterfactual,
            treatment,
        },
        effects,
    })
}

impl MetricsReport {
    /// Aligned-column rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tau = {}   cases = {}   normaliser = {}", self.tau, self.cases, self.normalizer);
        let _ = writeln!(s, "{:<16}{:>12}{:>12}", "", "RMSE%", "MAE%");
        let _ = writeln!(s, "{:<16}{:>12.4}{:>12.4}", "factual", self.factual.rmse_pct, self.factual.mae_pct);
        if let Some(cf) = &self.counterfactual {
            let _ = writeln!(s, "{:<16}{:>12.4}{:>12.4}", "counterfactual", cf.rmse_pct, cf.mae_pct);
        }
        if let Some(t) = &self.treatment {
            let _ = writeln!(s, "{:<16}{:>12.4}", "Tr Acc.", t.tr_acc);
            let _ = writeln!(s, "{:<16}{:>12.4}", "TrT Acc.", t.trt_acc);
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:>4}{:>8}{:>14}{:>14}", "h", "n", "fact RMSE%", "fact MAE%");
        if self.counterfactual.is_some() {
            let _ = write!(s, "{:>14}{:>14}", "cf RMSE%", "cf MAE%");
        }
        let _ = writeln!(s);
        for (i, row) in self.factual.per_horizon.iter().enumerate() {
            let _ = write!(s, "{:>4}{:>8}{:>14.4}{:>14.4}", row.h, row.n, row.rmse_pct, row.mae_pct);
            if let Some(cf) = &self.counterfactual {
                let _ = write!(s, "{:>14.4}{:>14.4}", cf.per_horizon[i].rmse_pct, cf.per_horizon[i].mae_pct);
            }
            let _ = writeln!(s);
        }
        s
    }
}
