//! The forecasting network.
//!
//! ```text
//! encoder   h_s = GRU(h_{s-1}, [x_s, v_s, a_{s-1}, y_s])        rep_t = h_t
//! outcome   Ŷ_{t+1} = G_y(rep_t, a_t)
//! classify  Â_t = softmax(G_a^k(GRL(rep_t)))  for each k
//! medium    Z_t = tanh(Ψ [rep_t, a_t])                         K blocks of d_z
//! decoder   s_0 = rep_t,  s_j = GRU_dec(s_{j-1}, [Ŷ_{t+j}, a_{t+j-1}, v_{t+j}])
//!           Ŷ_{t+j+1} = G_y(s_j, a_{t+j})
//! ```
//!
//! `v_s` is flattened treatment-major. With `depth > 1` the encoder stacks
//! GRUs and `rep_t` is the top layer. All values are in normalised units.

pub mod batch;
pub mod checkpoint;

pub use batch::{Batch, DecoderStep};

use crate::autodiff::{AdError, AdResult, Bound, DenseParams, GruParams, ParamGroup, ParamStore, Tape, Tensor, Var, NUMERIC_FLOOR};
use crate::data::{History, PlanStep, TimeStep};
use crate::seeds::{self, Stream};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("horizon {tau} exceeds the model's maximum of {tau_max}")]
    Horizon { tau: usize, tau_max: usize },
    #[error("input dimension mismatch: {0}")]
    Dims(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_v: usize,
    pub k: usize,
    /// Representation width.
    pub d_r: usize,
    /// Medium-representation width per treatment.
    pub d_z: usize,
    pub tau_max: usize,
    /// Stacked encoder GRUs.
    pub depth: usize,
    /// Hidden width of the outcome head.
    pub outcome_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 1,
            d_v: 1,
            k: 2,
            d_r: 64,
            d_z: 8,
            tau_max: 5,
            depth: 1,
            outcome_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let fields = [
            ("d_x", self.d_x),
            ("d_v", self.d_v),
            ("k", self.k),
            ("d_r", self.d_r),
            ("d_z", self.d_z),
            ("tau_max", self.tau_max),
            ("depth", self.depth),
            ("outcome_hidden", self.outcome_hidden),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(NetError::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    pub fn encoder_input(&self) -> usize {
        self.d_x + self.d_v * self.k + self.k + 1
    }

    pub fn decoder_input(&self) -> usize {
        1 + self.k + self.d_v * self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    encoder: Vec<GruParams>,
    decoder: GruParams,
    outcome_hidden: DenseParams,
    outcome_out: DenseParams,
    classifiers: Vec<DenseParams>,
    psi: DenseParams,
}

/// Predictions of the outcome head for the reference settings of one `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSet {
    /// Ŷ[a_0], no treatment.
    pub none: f64,
    /// Ŷ[e_k] for each single treatment.
    pub single: Vec<f64>,
    /// Ŷ[a] for the requested setting.
    pub mixed: f64,
    pub a: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcfNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    layout: Layout,
}

fn bits_row(a: &[u8]) -> Vec<f64> {
    a.iter().map(|&b| b as f64).collect()
}

/// Encoder input for one step.
pub fn encoder_row(x: &[f64], v: &[Vec<f64>], a_prev: Option<&[u8]>, y: f64, k: usize) -> Vec<f64> {
    let mut row = x.to_vec();
    for j in 0..k {
        row.extend(v.iter().map(|r| r[j]));
    }
    match a_prev {
        Some(a) => row.extend(bits_row(a)),
        None => row.extend(std::iter::repeat_n(0.0, k)),
    }
    row.push(y);
    row
}

/// Decoder input after the predicted outcome: `[a_prev, v]`.
pub fn decoder_row(a_prev: &[u8], v: &[Vec<f64>]) -> Vec<f64> {
    let mut row = bits_row(a_prev);
    for j in 0..a_prev.len() {
        row.extend(v.iter().map(|r| r[j]));
    }
    row
}

impl TcfNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = seeds::rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let rep = ParamGroup::Representation;
        let mut encoder = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let input = if l == 0 { config.encoder_input() } else { config.d_r };
            encoder.push(GruParams::new(&mut store, &format!("encoder.{l}"), rep, input, config.d_r, &mut rng));
        }
        let decoder = GruParams::new(&mut store, "decoder", rep, config.decoder_input(), config.d_r, &mut rng);
        let out = ParamGroup::Outcome;
        let outcome_hidden = DenseParams::new(&mut store, "outcome.hidden", out, config.d_r + config.k, config.outcome_hidden, &mut rng);
        let outcome_out = DenseParams::new(&mut store, "outcome.out", out, config.outcome_hidden, 1, &mut rng);
        let classifiers = (0..config.k)
            .map(|k| DenseParams::new(&mut store, &format!("classifier.{k}"), ParamGroup::Classifier, config.d_r, 2, &mut rng))
            .collect();
        let psi = DenseParams::new(&mut store, "psi", ParamGroup::Medium, config.d_r + config.k, config.k * config.d_z, &mut rng);
        Ok(Self {
            config,
            store,
            layout: Layout {
                encoder,
                decoder,
                outcome_hidden,
                outcome_out,
                classifiers,
                psi,
            },
        })
    }

    // ----- graph builders shared by training and inference -----

    /// Top-layer states after each step. `inputs[s]` is `[B, encoder_input]`.
    pub fn build_encoder(&self, tape: &mut Tape, b: &Bound, inputs: &[Var]) -> AdResult<Vec<Var>> {
        let rows = inputs.first().map_or(0, |v| tape.value(*v).rows());
        let mut hidden: Vec<Var> = (0..self.config.depth)
            .map(|_| tape.constant(Tensor::zeros(rows, self.config.d_r)))
            .collect();
        let mut tops = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut input = x;
            for (l, gru) in self.layout.encoder.iter().enumerate() {
                hidden[l] = gru.step(tape, b, input, hidden[l])?;
                input = hidden[l];
            }
            tops.push(input);
        }
        Ok(tops)
    }

    /// `[N, 1]` predictions from states `[N, d_r]` and treatment bits `[N, K]`.
    pub fn build_outcome(&self, tape: &mut Tape, b: &Bound, rep: Var, a: Var) -> AdResult<Var> {
        let input = tape.concat_cols(&[rep, a])?;
        let h = self.layout.outcome_hidden.forward(tape, b, input)?;
        let h = tape.tanh(h)?;
        self.layout.outcome_out.forward(tape, b, h)
    }

    /// Per-treatment `[N, 2]` probabilities, column `j` for `a_k = j`.
    pub fn build_classifiers(&self, tape: &mut Tape, b: &Bound, rep: Var) -> AdResult<Vec<Var>> {
        self.layout
            .classifiers
            .iter()
            .map(|head| {
                let logits = head.forward(tape, b, rep)?;
                tape.softmax(logits)
            })
            .collect()
    }

    /// `[N, K * d_z]`, block `k` holding `Z_k`.
    pub fn build_medium(&self, tape: &mut Tape, b: &Bound, rep: Var, a: Var) -> AdResult<Var> {
        let input = tape.concat_cols(&[rep, a])?;
        let z = self.layout.psi.forward(tape, b, input)?;
        tape.tanh(z)
    }

    pub fn build_decoder_step(&self, tape: &mut Tape, b: &Bound, state: Var, y_prev: Var, rest: Var) -> AdResult<Var> {
        let input = tape.concat_cols(&[y_prev, rest])?;
        self.layout.decoder.step(tape, b, input, state)
    }

    /// Autoregressive rollout from states `s0`. `first_a` is `[N, K]`; each
    /// later step gives the decoder input tail `[a_prev, v]` and the bits `a`
    /// fed to the outcome head. Returns one `[N, 1]` prediction per horizon.
    pub fn build_rollout(&self, tape: &mut Tape, b: &Bound, s0: Var, first_a: Var, later: &[(Var, Var)]) -> AdResult<Vec<Var>> {
        let mut preds = vec![self.build_outcome(tape, b, s0, first_a)?];
        let mut state = s0;
        for &(rest, a) in later {
            let y_prev = *preds.last().expect("non-empty");
            state = self.build_decoder_step(tape, b, state, y_prev, rest)?;
            preds.push(self.build_outcome(tape, b, state, a)?);
        }
        Ok(preds)
    }

    // ----- inference -----

    fn check_step(&self, x: &[f64], v: &[Vec<f64>]) -> Result<(), NetError> {
        let c = &self.config;
        if x.len() != c.d_x || v.len() != c.d_v || v.iter().any(|r| r.len() != c.k) {
            return Err(NetError::Dims(format!(
                "expected x of length {} and v of shape {}x{}",
                c.d_x, c.d_v, c.k
            )));
        }
        Ok(())
    }

    fn check_bits(&self, a: &[u8]) -> Result<(), NetError> {
        if a.len() != self.config.k || a.iter().any(|&b| b > 1) {
            return Err(NetError::Dims(format!("treatment vector must have {} bits", self.config.k)));
        }
        Ok(())
    }

    /// Representations after each step of `steps`; entry `t-1` equals `encode` of the history at `t`.
    pub fn encode_steps(&self, steps: &[TimeStep]) -> Result<Vec<Vec<f64>>, NetError> {
        let rows: Vec<Vec<f64>> = steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                self.check_step(&s.x, &s.v)?;
                let prev = if i == 0 { None } else { Some(steps[i - 1].a.as_slice()) };
                Ok(encoder_row(&s.x, &s.v, prev, s.y, self.config.k))
            })
            .collect::<Result<_, NetError>>()?;
        self.encode_rows(&rows)
    }

    fn encode_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NetError> {
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape);
        let inputs: Vec<Var> = rows
            .iter()
            .map(|r| tape.constant(Tensor::row(r.clone())))
            .collect();
        let tops = self.build_encoder(&mut tape, &b, &inputs)?;
        Ok(tops.iter().map(|v| tape.value(*v).values().to_vec()).collect())
    }

    /// Balanced representation of a history. The treatment at `t` is not an input.
    pub fn encode(&self, history: &History) -> Result<Vec<f64>, NetError> {
        let rows: Vec<Vec<f64>> = (0..history.t)
            .map(|i| {
                self.check_step(&history.covariates[i], &history.features[i])?;
                let prev = if i == 0 { None } else { Some(history.treatments[i - 1].as_slice()) };
                Ok(encoder_row(&history.covariates[i], &history.features[i], prev, history.outcomes[i], self.config.k))
            })
            .collect::<Result<_, NetError>>()?;
        Ok(self.encode_rows(&rows)?.pop().unwrap_or_else(|| vec![0.0; self.config.d_r]))
    }

    fn rep_var(&self, tape: &mut Tape, rep: &[f64]) -> Result<Var, NetError> {
        if rep.len() != self.config.d_r {
            return Err(NetError::Dims(format!("representation must have width {}", self.config.d_r)));
        }
        Ok(tape.constant(Tensor::row(rep.to_vec())))
    }

    /// `K` rows of `(P(a_k = 0), P(a_k = 1))`.
    pub fn predict_treatments(&self, rep: &[f64]) -> Result<Vec<[f64; 2]>, NetError> {
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape);
        let r = self.rep_var(&mut tape, rep)?;
        let heads = self.build_classifiers(&mut tape, &b, r)?;
        Ok(heads
            .iter()
            .map(|h| {
                let v = tape.value(*h).values();
                [v[0], v[1]]
            })
            .collect())
    }

    /// Outcome head evaluated at one representation for each row of `settings`.
    fn outcome_rows(&self, rep: &[f64], settings: &[Vec<u8>]) -> Result<Vec<f64>, NetError> {
        for a in settings {
            self.check_bits(a)?;
        }
        if rep.len() != self.config.d_r {
            return Err(NetError::Dims(format!("representation must have width {}", self.config.d_r)));
        }
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape);
        let n = settings.len();
        let r = tape.constant(Tensor::matrix(n, rep.len(), rep.iter().copied().cycle().take(n * rep.len()).collect()));
        let a = tape.constant(Tensor::matrix(n, self.config.k, settings.iter().flat_map(|a| bits_row(a)).collect()));
        let y = self.build_outcome(&mut tape, &b, r, a)?;
        Ok(tape.value(y).values().to_vec())
    }

    pub fn predict_outcome(&self, rep: &[f64], a: &[u8]) -> Result<f64, NetError> {
        Ok(self.outcome_rows(rep, &[a.to_vec()])?[0])
    }

    /// `K + 2` head evaluations: no treatment, each single treatment, and `a`.
    pub fn outcome_set(&self, rep: &[f64], a: &[u8]) -> Result<OutcomeSet, NetError> {
        let k = self.config.k;
        let mut settings = vec![vec![0u8; k]];
        for j in 0..k {
            let mut e = vec![0u8; k];
            e[j] = 1;
            settings.push(e);
        }
        settings.push(a.to_vec());
        let ys = self.outcome_rows(rep, &settings)?;
        Ok(OutcomeSet {
            none: ys[0],
            single: ys[1..=k].to_vec(),
            mixed: ys[k + 1],
            a: a.to_vec(),
        })
    }

    /// Forecasts `Ŷ_{t+1..t+τ}` for `τ = plan.len()`. `plan[j]` holds `a_{t+j}`
    /// and `v_{t+j}`; `plan[0].v` is already part of the history and is unused.
    pub fn decode(&self, rep: &[f64], plan: &[PlanStep]) -> Result<Vec<f64>, NetError> {
        Ok(self.decode_many(&[rep.to_vec()], &[plan.to_vec()])?.pop().expect("one row"))
    }

    /// Batched [`decode`](Self::decode); all plans must share one horizon.
    pub fn decode_many(&self, reps: &[Vec<f64>], plans: &[Vec<PlanStep>]) -> Result<Vec<Vec<f64>>, NetError> {
        let n = reps.len();
        let tau = plans.first().map_or(0, Vec::len);
        if plans.len() != n || plans.iter().any(|p| p.len() != tau) {
            return Err(NetError::Dims("one plan per representation, all of equal length".into()));
        }
        if tau == 0 {
            return Err(NetError::Dims("plan must have at least one step".into()));
        }
        if tau > self.config.tau_max {
            return Err(NetError::Horizon {
                tau,
                tau_max: self.config.tau_max,
            });
        }
        for (rep, plan) in reps.iter().zip(plans) {
            if rep.len() != self.config.d_r {
                return Err(NetError::Dims(format!("representation must have width {}", self.config.d_r)));
            }
            for s in plan {
                self.check_bits(&s.a)?;
                self.check_step(&vec![0.0; self.config.d_x], &s.v)?;
            }
        }
        let k = self.config.k;
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape);
        let s0 = tape.constant(Tensor::matrix(n, self.config.d_r, reps.concat()));
        let bits = |tape: &mut Tape, j: usize| tape.constant(Tensor::matrix(n, k, plans.iter().flat_map(|p| bits_row(&p[j].a)).collect()));
        let first = bits(&mut tape, 0);
        let mut later = Vec::with_capacity(tau - 1);
        for j in 1..tau {
            let rest: Vec<f64> = plans.iter().flat_map(|p| decoder_row(&p[j - 1].a, &p[j].v)).collect();
            let rest = tape.constant(Tensor::matrix(n, self.config.decoder_input() - 1, rest));
            let a = bits(&mut tape, j);
            later.push((rest, a));
        }
        let preds = self.build_rollout(&mut tape, &b, s0, first, &later)?;
        Ok((0..n).map(|i| preds.iter().map(|p| tape.value(*p).values()[i]).collect()).collect())
    }

    /// `K` blocks of width `d_z`.
    pub fn medium_rep(&self, rep: &[f64], a: &[u8]) -> Result<Vec<Vec<f64>>, NetError> {
        self.check_bits(a)?;
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape);
        let r = self.rep_var(&mut tape, rep)?;
        let av = tape.constant(Tensor::row(bits_row(a)));
        let z = self.build_medium(&mut tape, &b, r, av)?;
        Ok(tape.value(z).values().chunks(self.config.d_z).map(<[f64]>::to_vec).collect())
    }

    /// True when the outcome head's weights on the treatment inputs are all zero.
    pub fn outcome_ignores_treatment(&self) -> bool {
        let w = &self.store.get(self.layout.outcome_hidden.weight).value;
        (self.config.d_r..self.config.d_r + self.config.k).all(|r| (0..w.cols()).all(|c| w.get(r, c) == 0.0))
    }

    pub fn classifier_layout(&self) -> &[DenseParams] {
        &self.layout.classifiers
    }

    pub fn outcome_layout(&self) -> (DenseParams, DenseParams) {
        (self.layout.outcome_hidden, self.layout.outcome_out)
    }
}

/// `O_k = a_k Z_k Y^F`.
pub fn anchor(a: &[u8], z: &[Vec<f64>], y_factual: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(z)
        .map(|(&bit, zk)| zk.iter().map(|v| bit as f64 * v * y_factual).collect())
        .collect()
}

/// `max(Σ_i |Z_k[i] ŷ - O_k[i]|, 1e-9)`.
pub fn density_ratio(z_k: &[f64], y_hat: f64, o_k: &[f64]) -> f64 {
    z_k.iter()
        .zip(o_k)
        .map(|(z, o)| (z * y_hat - o).abs())
        .sum::<f64>()
        .max(NUMERIC_FLOOR)
}
