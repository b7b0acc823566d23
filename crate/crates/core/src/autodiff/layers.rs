//! Parameter storage and the two layer kinds the network is built from.

use super::tape::{AdResult, Tape, Var};
use super::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which part of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Encoder/decoder recurrent weights (θ_r).
    Representation,
    /// Treatment classifier heads (θ_a).
    Classifier,
    /// Outcome head (θ_y).
    Outcome,
    /// Medium-representation head Ψ (θ_z).
    Medium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Flat, ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, group, Tensor::matrix(rows, cols, values))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p.value.clone())).collect(),
        }
    }
}

/// Tape handles for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps leaves created elsewhere, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// `y = x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl DenseParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), group, input, output, input, rng);
        let bias = store.add_uniform(format!("{name}.bias"), group, 1, output, input, rng);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> AdResult<Var> {
        let xw = tape.matmul(x, bound.var(self.weight))?;
        tape.add(xw, bound.var(self.bias))
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// n  = tanh(x Wn + (r ⊙ h) Un + bn)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruParams {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let fan = input + hidden;
        let mut mat = |suffix: &str, rows: usize, cols: usize, store: &mut ParamStore| {
            store.add_uniform(format!("{name}.{suffix}"), group, rows, cols, fan, rng)
        };
        let wz = mat("wz", input, hidden, store);
        let uz = mat("uz", hidden, hidden, store);
        let bz = mat("bz", 1, hidden, store);
        let wr = mat("wr", input, hidden, store);
        let ur = mat("ur", hidden, hidden, store);
        let br = mat("br", 1, hidden, store);
        let wn = mat("wn", input, hidden, store);
        let un = mat("un", hidden, hidden, store);
        let bn = mat("bn", 1, hidden, store);
        Self {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
            input,
            hidden,
        }
    }

    fn gate(&self, tape: &mut Tape, b: &Bound, x: Var, h: Var, w: ParamId, u: ParamId, bias: ParamId) -> AdResult<Var> {
        let xw = tape.matmul(x, b.var(w))?;
        let hu = tape.matmul(h, b.var(u))?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b.var(bias))
    }

    /// One step: `x` is `[batch, input]`, `h` is `[batch, hidden]`.
    pub fn step(&self, tape: &mut Tape, b: &Bound, x: Var, h: Var) -> AdResult<Var> {
        let z_pre = self.gate(tape, b, x, h, self.wz, self.uz, self.bz)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = self.gate(tape, b, x, h, self.wr, self.ur, self.br)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let n_pre = self.gate(tape, b, x, rh, self.wn, self.un, self.bn)?;
        let n = tape.tanh(n_pre)?;
        let one_minus_z = tape.one_minus(z)?;
        let left = tape.mul(one_minus_z, n)?;
        let right = tape.mul(z, h)?;
        tape.add(left, right)
    }
}
