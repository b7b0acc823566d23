//! Pharmacokinetic/pharmacodynamic tumour growth under chemo- and radiotherapy.
//!
//! Treatment 0 is chemotherapy, treatment 1 radiotherapy. The covariate is the
//! chemo concentration carried over from earlier doses, the interventional
//! features are the doses that would be given at each step.

use super::{Outcome, SimError, Status};
use crate::data::{TimeStep, Trajectory};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TumourParams {
    pub rho: f64,
    /// Carrying capacity in cm³.
    pub k_cap: f64,
    pub beta_c: f64,
    pub alpha_r: f64,
    pub beta_r: f64,
    /// Chemo concentration half-life in steps.
    pub half_life: f64,
    pub noise_std: f64,
    pub gamma_c: f64,
    pub gamma_r: f64,
    /// Diameter (cm) above which treatment becomes more likely than not.
    pub delta_thr: f64,
    pub d_max: f64,
    /// Initial diameter range in cm.
    pub init_diameter: (f64, f64),
    pub chemo_dose: (f64, f64),
    pub radio_dose: (f64, f64),
    /// Smallest emitted volume.
    pub floor: f64,
    pub steps: usize,
    pub patients: usize,
    pub seed: u64,
}

impl Default for TumourParams {
    fn default() -> Self {
        Self {
            rho: 0.02,
            k_cap: 1150.0,
            beta_c: 0.012,
            alpha_r: 0.04,
            beta_r: 0.004,
            half_life: 1.0,
            noise_std: 0.01,
            gamma_c: 5.0,
            gamma_r: 5.0,
            delta_thr: 6.5,
            d_max: 13.0,
            init_diameter: (1.5, 7.0),
            chemo_dose: (2.5, 7.5),
            radio_dose: (1.0, 3.0),
            floor: 0.01,
            steps: 30,
            patients: 500,
            seed: 0,
        }
    }
}

pub fn diameter(volume: f64) -> f64 {
    (6.0 * volume / std::f64::consts::PI).cbrt()
}

pub fn volume(diameter: f64) -> f64 {
    std::f64::consts::PI * diameter.powi(3) / 6.0
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl TumourParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let checks = [
            (self.rho > 0.0, "rho must be positive"),
            (self.k_cap > 0.0, "k_cap must be positive"),
            (self.beta_c >= 0.0 && self.alpha_r >= 0.0 && self.beta_r >= 0.0, "kill coefficients must be non-negative"),
            (self.gamma_c >= 0.0 && self.gamma_r >= 0.0, "gamma_c and gamma_r must be non-negative"),
            (self.half_life > 0.0, "half_life must be positive"),
            (self.noise_std >= 0.0, "noise_std must be non-negative"),
            (self.d_max > 0.0, "d_max must be positive"),
            (self.floor > 0.0 && self.floor < self.k_cap, "floor must lie in (0, k_cap)"),
            (self.init_diameter.0 > 0.0 && self.init_diameter.0 <= self.init_diameter.1, "bad init_diameter range"),
            (self.chemo_dose.0 <= self.chemo_dose.1 && self.radio_dose.0 <= self.radio_dose.1, "bad dose range"),
            (self.steps >= 2, "steps must be at least 2"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(SimError::Invalid(msg.to_string())),
            None => Ok(()),
        }
    }

    pub fn cap(&self) -> f64 {
        1.05 * self.k_cap
    }

    /// Probability that a therapy with bias `gamma` is given at mean diameter `d_bar`.
    pub fn assignment_probability(&self, gamma: f64, d_bar: f64) -> f64 {
        sigmoid(gamma / self.d_max * (d_bar - self.delta_thr))
    }

    /// One step from volume `v` and carried concentration `c_pre`.
    pub fn advance(&self, v: f64, c_pre: f64, a: &[u8], features: &[Vec<f64>], noise: f64) -> Outcome {
        let chemo = a[0] as f64 * features[0][0];
        let c = c_pre + chemo;
        let d = features[0][1];
        let radio = a[1] as f64 * (self.alpha_r * d + self.beta_r * d * d);
        let next = v * (1.0 + self.rho * (self.k_cap / v).ln() - self.beta_c * c - radio + noise);
        let (y, status) = if next >= self.cap() {
            (self.cap(), Status::Terminal)
        } else if next <= self.floor {
            (self.floor, Status::Recovered)
        } else {
            (next, Status::Normal)
        };
        Outcome {
            x: vec![c * 0.5f64.powf(1.0 / self.half_life)],
            y,
            status,
        }
    }

    /// Simulates one patient. Returns the trajectory and the per-step noise.
    pub fn patient<R: Rng>(&self, id: String, rng: &mut R) -> (Trajectory, Vec<Vec<f64>>) {
        let d0 = rng.random_range(self.init_diameter.0..=self.init_diameter.1);
        let normal = Normal::new(0.0, self.noise_std).expect("validated std");
        let noise: Vec<Vec<f64>> = (0..self.steps).map(|_| vec![normal.sample(rng)]).collect();
        let mut v = volume(d0).clamp(self.floor, self.cap());
        let mut c_pre = 0.0;
        let mut diameters = Vec::new();
        let mut steps = Vec::new();
        let mut terminal = false;
        for t in 0..self.steps {
            let dose_c = rng.random_range(self.chemo_dose.0..=self.chemo_dose.1);
            let dose_r = rng.random_range(self.radio_dose.0..=self.radio_dose.1);
            diameters.push(diameter(v));
            let recent = &diameters[diameters.len().saturating_sub(3)..];
            let d_bar = recent.iter().sum::<f64>() / recent.len() as f64;
            let a = vec![
                rng.random_bool(self.assignment_probability(self.gamma_c, d_bar)) as u8,
                rng.random_bool(self.assignment_probability(self.gamma_r, d_bar)) as u8,
            ];
            let step = TimeStep {
                x: vec![c_pre],
                v: vec![vec![dose_c, dose_r]],
                a,
                y: v,
            };
            let out = self.advance(v, c_pre, &step.a, &step.v, noise[t][0]);
            steps.push(step);
            if terminal || t + 1 == self.steps {
                break;
            }
            terminal = out.status == Status::Terminal;
            v = out.y;
            c_pre = out.x[0];
        }
        (Trajectory { entity_id: id, steps }, noise)
    }
}
