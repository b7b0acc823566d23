//! Optimisation of the network on factual and pseudo-counterfactual streams.

pub mod objective;

pub use objective::{build_objective, LossBreakdown, Objective, ObjectiveConfig};

use crate::autodiff::{AdError, ParamStore, Tensor, NUMERIC_FLOOR};
use crate::corrupt::{corrupt_trajectory, CorruptError, CorruptionConfig};
use crate::data::{Dataset, SplitFractions, Trajectory};
use crate::net::{Batch, ModelConfig, NetError, TcfNet};
use crate::seeds::{self, Stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {breakdown:?}")]
    NonFinite { epoch: usize, batch: usize, breakdown: LossBreakdown },
    #[error("training set is empty")]
    Empty,
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Corrupt(#[from] CorruptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda1_init: f64,
    pub lambda2_init: f64,
    /// Exponential growth rate of both λ schedules per epoch.
    pub rate: f64,
    pub lambda1_cap: f64,
    pub lambda2_cap: f64,
    pub seed: u64,
    /// Fixed summation order everywhere. Training is sequential, so both
    /// settings currently produce identical results.
    pub deterministic: bool,
    pub invert_ratio: bool,
    pub mask_inactive: bool,
    /// Lower clamp of the contrastive distances; larger values bound the contrastive gradient.
    pub distance_floor: f64,
    /// Train on the corrupted stream as well. Off gives the plain sequence-to-sequence ablation.
    pub counterfactual_stream: bool,
    pub corruption: CorruptionConfig,
    pub split: SplitFractions,
    /// Return the parameters of the epoch with the lowest validation RMSE.
    pub keep_best: bool,
    /// Rescale each batch gradient to at most this global L2 norm. 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            lambda1_init: 0.1,
            lambda2_init: 0.1,
            rate: 0.05,
            lambda1_cap: 1.0,
            lambda2_cap: 1.0,
            seed: 0,
            deterministic: true,
            invert_ratio: true,
            mask_inactive: false,
            distance_floor: NUMERIC_FLOOR,
            counterfactual_stream: true,
            corruption: CorruptionConfig::default(),
            split: SplitFractions::default(),
            keep_best: true,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    /// Plain sequence-to-sequence training: no adversary, no contrastive term, no corrupted stream.
    pub fn ablation(&self) -> Self {
        Self {
            lambda1_init: 0.0,
            lambda2_init: 0.0,
            counterfactual_stream: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.lambda1_init < 0.0 || self.lambda2_init < 0.0 || self.rate < 0.0 {
            return bad("lambda inits and rate must be non-negative");
        }
        if self.lambda1_cap < 0.0 || self.lambda2_cap < 0.0 {
            return bad("lambda caps must be non-negative");
        }
        if !(self.distance_floor >= NUMERIC_FLOOR) {
            return bad("distance_floor must be at least 1e-9");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn objective(&self, epoch: usize) -> ObjectiveConfig {
        let (lambda1, lambda2) = lambda_schedule(self, epoch);
        ObjectiveConfig {
            lambda1,
            lambda2,
            invert_ratio: self.invert_ratio,
            mask_inactive: self.mask_inactive,
            distance_floor: self.distance_floor,
        }
    }
}

/// `λ(e) = min(λ_init · exp(r e), λ_cap)` for both weights.
pub fn lambda_schedule(config: &TrainConfig, epoch: usize) -> (f64, f64) {
    let grow = (config.rate * epoch as f64).exp();
    (
        (config.lambda1_init * grow).min(config.lambda1_cap),
        (config.lambda2_init * grow).min(config.lambda2_cap),
    )
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.values()).map(|v| v * v).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.values_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let g = grads[i].values();
            let m = self.m[i].values_mut();
            for (mj, gj) in m.iter_mut().zip(g) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
            }
            let v = self.v[i].values_mut();
            for (vj, gj) in v.iter_mut().zip(g) {
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
            }
            let (m, v) = (self.m[i].values(), self.v[i].values());
            for (j, w) in p.value.values_mut().iter_mut().enumerate() {
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub val_rmse: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TcfNet,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Factual RMSE pooled over all horizons up to `tau_max`, in normalised units.
pub fn validation_rmse(net: &TcfNet, data: &Dataset, batch_size: usize) -> Result<Option<f64>, TrainError> {
    if data.is_empty() {
        return Ok(None);
    }
    let cfg = ObjectiveConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        invert_ratio: true,
        mask_inactive: false,
        distance_floor: NUMERIC_FLOOR,
    };
    let (mut sse, mut n) = (0.0, 0.0);
    for chunk in data.trajectories.chunks(batch_size) {
        let refs: Vec<&Trajectory> = chunk.iter().collect();
        let batch = Batch::new(&refs, None, &net.config);
        let obj = build_objective(net, &batch, &cfg)?;
        sse += obj.sse;
        n += obj.count;
    }
    Ok(Some((sse / n.max(1.0)).sqrt()))
}

/// Dimensions must match the model. Corrupted sets also need features in `[0, 1]`.
fn check_inputs(data: &Dataset, model: &ModelConfig, unit_features: bool) -> Result<(), TrainError> {
    if let Some(d) = data.dims() {
        if (d.d_x, d.d_v, d.k) != (model.d_x, model.d_v, model.k) {
            return Err(TrainError::Data(format!(
                "dataset has d_x={}, d_v={}, k={} but the model expects d_x={}, d_v={}, k={}",
                d.d_x, d.d_v, d.k, model.d_x, model.d_v, model.k
            )));
        }
    }
    for tr in data.trajectories.iter().filter(|_| unit_features) {
        for (i, s) in tr.steps.iter().enumerate() {
            if let Some(v) = s.v.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(TrainError::Data(format!(
                    "`{}` step {}: feature {v} outside [0, 1]; normalise first",
                    tr.entity_id,
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

/// Trains on normalised data. `on_epoch` sees every log record as it is produced.
pub fn train(
    train_set: &Dataset,
    valid_set: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Empty);
    }
    check_inputs(train_set, model, true)?;
    check_inputs(valid_set, model, false)?;
    let mut net = TcfNet::new(model.clone(), config.seed)?;
    let mut adam = Adam::new(&net.store, config.learning_rate, config.beta1, config.beta2);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 0..config.epochs {
        let obj_cfg = config.objective(epoch);
        let corrupted: Option<Vec<Trajectory>> = if config.counterfactual_stream {
            let mut rng = seeds::rng(config.seed, Stream::Corruption(epoch as u32));
            Some(
                train_set
                    .trajectories
                    .iter()
                    .map(|t| corrupt_trajectory(t, config.corruption, &mut rng).map(|(c, _)| c))
                    .collect::<Result<_, _>>()?,
            )
        } else {
            None
        };
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seeds::rng(config.seed, Stream::Shuffle(epoch as u32)));

        let (mut ly, mut la, mut ld, mut weight) = (0.0, 0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let fact: Vec<&Trajectory> = idx.iter().map(|&i| &train_set.trajectories[i]).collect();
            let cf: Option<Vec<&Trajectory>> = corrupted.as_ref().map(|c| idx.iter().map(|&i| &c[i]).collect());
            let batch = Batch::new(&fact, cf.as_deref(), &net.config);
            let obj = build_objective(&net, &batch, &obj_cfg)?;
            let b = obj.breakdown;
            if !(b.l_y.is_finite() && b.l_a.is_finite() && b.l_d.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    breakdown: b,
                });
            }
            let grads = obj.param_gradients().map_err(|e| match e {
                AdError::NonFiniteGradient { .. } | AdError::NonFinite { .. } => TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    breakdown: b,
                },
                other => other.into(),
            })?;
            let mut grads = grads;
            clip_global_norm(&mut grads, config.grad_clip);
            adam.step(&mut net.store, &grads);
            let w = idx.len() as f64;
            ly += w * b.l_y;
            la += w * b.l_a;
            ld += w * b.l_d;
            weight += w;
        }
        let val_rmse = validation_rmse(&net, valid_set, config.batch_size)?;
        let entry = EpochLog {
            epoch,
            losses: LossBreakdown::new(ly / weight, la / weight, ld / weight, obj_cfg.lambda1, obj_cfg.lambda2),
            val_rmse,
            lambda1: obj_cfg.lambda1,
            lambda2: obj_cfg.lambda2,
        };
        log::debug!("epoch {epoch}: {entry:?}");
        on_epoch(&entry);
        log.push(entry);
        if config.keep_best {
            if let Some(v) = val_rmse {
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, epoch, net.store.clone()));
                }
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            net.store = store;
            epoch
        }
        None => config.epochs.saturating_sub(1),
    };
    Ok(TrainOutcome { net, log, best_epoch })
}

/// Compares tape gradients of the training objective with central differences
/// of the reported total. Classifier parameters descend `L_a`, the negative
/// of their share in the total, so their numeric gradient is negated.
pub fn check_objective_gradients(net: &TcfNet, batch: &Batch, cfg: &ObjectiveConfig, eps: f64) -> Result<crate::autodiff::GradCheckReport, TrainError> {
    use crate::autodiff::{central_difference_noise, central_differences, compare, ParamGroup};
    let obj = build_objective(net, batch, cfg)?;
    let analytic = obj.param_gradients()?;
    let mut probe = net.clone();
    let mut work: Vec<Tensor> = net.store.iter().map(|p| p.value.clone()).collect();
    let mut numeric = central_differences(&mut work, eps, |ps| {
        for (p, v) in probe.store.params_mut().iter_mut().zip(ps) {
            p.value.values_mut().copy_from_slice(v.values());
        }
        Ok(build_objective(&probe, batch, cfg)?.breakdown.total)
    })?;
    for (g, p) in numeric.iter_mut().zip(net.store.iter()) {
        if p.group == ParamGroup::Classifier {
            *g = g.map(|v| -v);
        }
    }
    Ok(compare(&analytic, &numeric, central_difference_noise(obj.breakdown.total, eps)))
}
