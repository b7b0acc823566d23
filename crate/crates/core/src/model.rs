//! A trained network together with its normalisation, working in data units.

use crate::data::{NormStats, PlanStep, TimeStep, Trajectory};
use crate::net::{NetError, OutcomeSet, TcfNet};

#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub net: TcfNet,
    pub norm: NormStats,
}

impl Forecaster {
    pub fn new(net: TcfNet, norm: NormStats) -> Result<Self, NetError> {
        let (c, d) = (&net.config, norm.dims);
        if (c.d_x, c.d_v, c.k) != (d.d_x, d.d_v, d.k) {
            return Err(NetError::Dims(format!(
                "normalisation is for d_x={}, d_v={}, k={} but the network expects d_x={}, d_v={}, k={}",
                d.d_x, d.d_v, d.k, c.d_x, c.d_v, c.k
            )));
        }
        Ok(Self { net, norm })
    }

    pub fn k(&self) -> usize {
        self.net.config.k
    }

    pub fn tau_max(&self) -> usize {
        self.net.config.tau_max
    }

    /// Representation after each step: entry `t - 1` conditions on steps `1..=t`.
    pub fn representations(&self, steps: &[TimeStep]) -> Result<Vec<Vec<f64>>, NetError> {
        let norm: Vec<TimeStep> = steps.iter().map(|s| self.norm.normalize_step(s)).collect();
        self.net.encode_steps(&norm)
    }

    /// Representation of the history of `traj` up to step `t` (1-based).
    pub fn representation(&self, traj: &Trajectory, t: usize) -> Result<Vec<f64>, NetError> {
        if t == 0 || t > traj.len() {
            return Err(NetError::Dims(format!("history index {t} out of range 1..={}", traj.len())));
        }
        Ok(self.representations(&traj.steps[..t])?.pop().expect("t >= 1"))
    }

    fn normalize_plan(&self, plan: &[PlanStep]) -> Vec<PlanStep> {
        plan.iter()
            .map(|s| PlanStep {
                a: s.a.clone(),
                v: self.norm.normalize_v(&s.v),
            })
            .collect()
    }

    pub fn forecast(&self, rep: &[f64], plan: &[PlanStep]) -> Result<Vec<f64>, NetError> {
        Ok(self.forecast_many(&[rep.to_vec()], &[plan.to_vec()])?.pop().expect("one row"))
    }

    /// Plans must share one length.
    pub fn forecast_many(&self, reps: &[Vec<f64>], plans: &[Vec<PlanStep>]) -> Result<Vec<Vec<f64>>, NetError> {
        let plans: Vec<Vec<PlanStep>> = plans.iter().map(|p| self.normalize_plan(p)).collect();
        let out = self.net.decode_many(reps, &plans)?;
        Ok(out
            .into_iter()
            .map(|row| row.into_iter().map(|y| self.norm.y.invert(y)).collect())
            .collect())
    }

    pub fn outcome_set(&self, rep: &[f64], a: &[u8]) -> Result<OutcomeSet, NetError> {
        let s = self.net.outcome_set(rep, a)?;
        let y = &self.norm.y;
        Ok(OutcomeSet {
            none: y.invert(s.none),
            single: s.single.iter().map(|v| y.invert(*v)).collect(),
            mixed: y.invert(s.mixed),
            a: s.a,
        })
    }

    pub fn predict_treatments(&self, rep: &[f64]) -> Result<Vec<[f64; 2]>, NetError> {
        self.net.predict_treatments(rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::traj;
    use crate::data::{fit_stats, normalize, Dataset};
    use crate::net::ModelConfig;

    fn setup() -> (Forecaster, Dataset) {
        let ds = Dataset::new(vec![traj("a", 6, 0.0), traj("b", 6, 3.0)]).unwrap();
        let cfg = ModelConfig { d_r: 6, d_z: 2, tau_max: 3, outcome_hidden: 5, ..Default::default() };
        let f = Forecaster::new(TcfNet::new(cfg, 4).unwrap(), fit_stats(&ds).unwrap()).unwrap();
        (f, ds)
    }

    #[test]
    fn raw_forecast_is_denormalised_network_output() {
        let (f, ds) = setup();
        let norm = normalize(&ds, &f.norm);
        let tr = &ds.trajectories[1];
        let plan: Vec<PlanStep> = tr.steps[3..6].iter().map(|s| PlanStep { a: s.a.clone(), v: s.v.clone() }).collect();
        let rep = f.representation(tr, 3).unwrap();
        let rep_n = f.net.encode_steps(&norm.trajectories[1].steps[..3]).unwrap().pop().unwrap();
        assert_eq!(rep, rep_n);
        let nplan: Vec<PlanStep> = norm.trajectories[1].steps[3..6].iter().map(|s| PlanStep { a: s.a.clone(), v: s.v.clone() }).collect();
        let expect: Vec<f64> = f.net.decode(&rep_n, &nplan).unwrap().iter().map(|y| f.norm.y.invert(*y)).collect();
        assert_eq!(f.forecast(&rep, &plan).unwrap(), expect);
    }

    #[test]
    fn first_step_matches_outcome_head() {
        let (f, ds) = setup();
        let rep = f.representation(&ds.trajectories[0], 4).unwrap();
        let plan = vec![PlanStep { a: vec![1, 1], v: ds.trajectories[0].steps[3].v.clone() }];
        let s = f.outcome_set(&rep, &[1, 1]).unwrap();
        assert!((f.forecast(&rep, &plan).unwrap()[0] - s.mixed).abs() < 1e-12);
    }

    #[test]
    fn mismatched_normalisation_rejected() {
        let (f, _) = setup();
        let cfg = ModelConfig { k: 3, ..f.net.config.clone() };
        assert!(Forecaster::new(TcfNet::new(cfg, 0).unwrap(), f.norm).is_err());
    }
}
