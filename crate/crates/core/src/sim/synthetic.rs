//! Autoregressive generator with additive treatment effects and pairwise interactions.
//!
//! ```text
//! y_{t+1} = c y_t + g(x_t) + Σ_k w_k a_k v_k + Σ_{j<k} u_jk a_j a_k + e_y
//! x_{t+1} = φ x_t + (1 - φ) tanh(y_t) + e_x
//! g(x)    = 0.5 Σ_d sin(x_d)
//! P(a_k = 1 | x_t) = σ(bias · x_{t, k mod D_x})
//! ```

use super::{Outcome, SimError, Status};
use crate::data::{TimeStep, Trajectory};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const MAX_TREATMENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureMode {
    /// Every feature is 1.
    Constant,
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub k: usize,
    pub w: Vec<f64>,
    /// Upper-triangular interactions: `u[j][k]` for `j < k`, other entries ignored.
    pub u: Vec<Vec<f64>>,
    pub ar: f64,
    pub d_x: usize,
    /// Persistence of covariates.
    pub phi: f64,
    pub bias: f64,
    pub noise_std: f64,
    pub features: FeatureMode,
    pub steps: usize,
    pub entities: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            k: 2,
            w: vec![0.7, -0.5],
            u: vec![vec![0.0; 2]; 2],
            ar: 0.5,
            d_x: 2,
            phi: 0.7,
            bias: 1.5,
            noise_std: 0.1,
            features: FeatureMode::Constant,
            steps: 30,
            entities: 500,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Sets `u_{jk}` symmetrically.
    pub fn with_interaction(mut self, j: usize, k: usize, value: f64) -> Self {
        self.u[j][k] = value;
        self.u[k][j] = value;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.k == 0 || self.k > MAX_TREATMENTS {
            return Err(SimError::Invalid(format!("k must lie in 1..={MAX_TREATMENTS}, got {}", self.k)));
        }
        if self.w.len() != self.k || self.u.len() != self.k || self.u.iter().any(|r| r.len() != self.k) {
            return Err(SimError::Invalid("w must have k entries and u must be k x k".into()));
        }
        if self.ar.abs() >= 1.0 {
            return Err(SimError::Invalid(format!("|ar| must be below 1, got {}", self.ar)));
        }
        if self.d_x == 0 || !(0.0..=1.0).contains(&self.phi) || self.noise_std < 0.0 || self.steps < 2 {
            return Err(SimError::Invalid("need d_x >= 1, phi in [0, 1], noise_std >= 0, steps >= 2".into()));
        }
        if let FeatureMode::Uniform { lo, hi } = self.features {
            if !(lo <= hi) {
                return Err(SimError::Invalid("uniform feature range must have lo <= hi".into()));
            }
        }
        Ok(())
    }

    /// Noise vector layout: `[e_y, e_x[0], .., e_x[D_x - 1]]`.
    pub fn advance(&self, x: &[f64], y: f64, a: &[u8], features: &[Vec<f64>], noise: &[f64]) -> Outcome {
        let g: f64 = 0.5 * x.iter().map(|v| v.sin()).sum::<f64>();
        let mut next = self.ar * y + g;
        for k in 0..self.k {
            next += self.w[k] * a[k] as f64 * features[0][k];
        }
        for j in 0..self.k {
            for k in j + 1..self.k {
                next += self.u[j][k] * (a[j] * a[k]) as f64;
            }
        }
        next += noise[0];
        let x_next = x
            .iter()
            .zip(&noise[1..])
            .map(|(xi, e)| self.phi * xi + (1.0 - self.phi) * y.tanh() + e)
            .collect();
        Outcome {
            x: x_next,
            y: next,
            status: Status::Normal,
        }
    }

    pub fn entity<R: Rng>(&self, id: String, rng: &mut R) -> (Trajectory, Vec<Vec<f64>>) {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let e = Normal::new(0.0, self.noise_std).expect("validated std");
        let mut x: Vec<f64> = (0..self.d_x).map(|_| std.sample(rng)).collect();
        let mut y = std.sample(rng);
        let noise: Vec<Vec<f64>> = (0..self.steps).map(|_| (0..=self.d_x).map(|_| e.sample(rng)).collect()).collect();
        let mut steps = Vec::with_capacity(self.steps);
        for t in 0..self.steps {
            let v: Vec<f64> = (0..self.k)
                .map(|_| match self.features {
                    FeatureMode::Constant => 1.0,
                    FeatureMode::Uniform { lo, hi } => rng.random_range(lo..=hi),
                })
                .collect();
            let a = (0..self.k)
                .map(|k| {
                    let p = 1.0 / (1.0 + (-self.bias * x[k % self.d_x]).exp());
                    rng.random_bool(p) as u8
                })
                .collect();
            let step = TimeStep { x: x.clone(), v: vec![v], a, y };
            let out = self.advance(&x, y, &step.a, &step.v, &noise[t]);
            steps.push(step);
            x = out.x;
            y = out.y;
        }
        (Trajectory { entity_id: id, steps }, noise)
    }
}
