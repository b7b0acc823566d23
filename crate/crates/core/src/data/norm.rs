use super::{DataError, Dataset, Dims, TimeStep};
use serde::{Deserialize, Serialize};

const MIN_SPREAD: f64 = 1e-12;

/// z-score statistics of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
    /// Zero variance; the feature is passed through unchanged.
    pub constant: bool,
}

impl ZScore {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std,
            constant: std < MIN_SPREAD,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.constant { v } else { (v - self.mean) / self.std }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.constant { v } else { v * self.std + self.mean }
    }

    /// Scale of a difference after inversion.
    pub fn invert_delta(&self, d: f64) -> f64 {
        if self.constant { d } else { d * self.std }
    }
}

/// Min-max statistics of one feature, mapping `[min, max]` to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

impl MinMax {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
        Self {
            min,
            max,
            constant: max - min < MIN_SPREAD,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.constant { v } else { (v - self.min) / (self.max - self.min) }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.constant { v } else { v * (self.max - self.min) + self.min }
    }
}

/// Frozen normalisation statistics, fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub dims: Dims,
    pub x: Vec<ZScore>,
    /// `v[d][k]`, same layout as [`TimeStep::v`](super::TimeStep).
    pub v: Vec<Vec<MinMax>>,
    pub y: ZScore,
}

impl NormStats {
    pub fn constant_features(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, s) in self.x.iter().enumerate() {
            if s.constant {
                out.push(format!("x[{i}]"));
            }
        }
        for (d, row) in self.v.iter().enumerate() {
            for (k, s) in row.iter().enumerate() {
                if s.constant {
                    out.push(format!("v[{d}][{k}]"));
                }
            }
        }
        if self.y.constant {
            out.push("y".into());
        }
        out
    }

    pub fn normalize_v(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        map_v(&self.v, v, MinMax::apply)
    }

    pub fn denormalize_v(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        map_v(&self.v, v, MinMax::invert)
    }

    pub fn normalize_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x).map(|(v, s)| s.apply(*v)).collect()
    }

    pub fn normalize_step(&self, step: &TimeStep) -> TimeStep {
        TimeStep {
            x: self.normalize_x(&step.x),
            v: self.normalize_v(&step.v),
            a: step.a.clone(),
            y: self.y.apply(step.y),
        }
    }
}

fn map_v(stats: &[Vec<MinMax>], v: &[Vec<f64>], f: fn(&MinMax, f64) -> f64) -> Vec<Vec<f64>> {
    v.iter()
        .zip(stats)
        .map(|(row, srow)| row.iter().zip(srow).map(|(x, s)| f(s, *x)).collect())
        .collect()
}

pub fn fit_stats(train: &Dataset) -> Result<NormStats, DataError> {
    let dims = train
        .dims()
        .ok_or_else(|| DataError::Split("cannot fit normalisation on an empty dataset".into()))?;
    let steps = || train.trajectories.iter().flat_map(|t| t.steps.iter());
    let x = (0..dims.d_x).map(|i| ZScore::fit(steps().map(move |s| s.x[i]))).collect();
    let v = (0..dims.d_v)
        .map(|d| (0..dims.k).map(|k| MinMax::fit(steps().map(move |s| s.v[d][k]))).collect())
        .collect();
    let y = ZScore::fit(steps().map(|s| s.y));
    Ok(NormStats { dims, x, v, y })
}

pub fn normalize(dataset: &Dataset, stats: &NormStats) -> Dataset {
    transform(dataset, stats, ZScore::apply, MinMax::apply)
}

pub fn denormalize(dataset: &Dataset, stats: &NormStats) -> Dataset {
    transform(dataset, stats, ZScore::invert, MinMax::invert)
}

fn transform(dataset: &Dataset, stats: &NormStats, z: fn(&ZScore, f64) -> f64, m: fn(&MinMax, f64) -> f64) -> Dataset {
    let mut out = dataset.clone();
    for step in out.trajectories.iter_mut().flat_map(|t| t.steps.iter_mut()) {
        for (v, s) in step.x.iter_mut().zip(&stats.x) {
            *v = z(s, *v);
        }
        step.v = map_v(&stats.v, &step.v, m);
        step.y = z(&stats.y, step.y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::test_support::traj;
    use super::*;

    fn sample() -> Dataset {
        Dataset::new(vec![traj("a", 7, 0.0), traj("b", 5, 2.0)]).unwrap()
    }

    #[test]
    fn constant_feature_passes_through_flagged() {
        let ds = sample();
        let stats = fit_stats(&ds).unwrap();
        // v[0][1] is 0.7 everywhere
        assert!(stats.v[0][1].constant);
        assert_eq!(stats.constant_features(), vec!["v[0][1]".to_string()]);
        let n = normalize(&ds, &stats);
        assert!(n.trajectories.iter().flat_map(|t| &t.steps).all(|s| s.v[0][1] == 0.7));
    }

    #[test]
    fn normalized_train_mean_is_zero() {
        let ds = sample();
        let stats = fit_stats(&ds).unwrap();
        let n = normalize(&ds, &stats);
        let xs: Vec<f64> = n.trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.x[0])).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-9);
        let vs = n.trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.v[0][0]));
        assert!(vs.clone().all(|v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn round_trip_within_tolerance() {
        let ds = sample();
        let stats = fit_stats(&ds).unwrap();
        let back = denormalize(&normalize(&ds, &stats), &stats);
        for (a, b) in ds.trajectories.iter().zip(&back.trajectories) {
            for (s, r) in a.steps.iter().zip(&b.steps) {
                assert!((s.y - r.y).abs() < 1e-9);
                assert!((s.x[0] - r.x[0]).abs() < 1e-9);
                assert!((s.v[0][0] - r.v[0][0]).abs() < 1e-9);
                assert_eq!(s.a, r.a);
            }
        }
    }

    #[test]
    fn empty_dataset_cannot_be_fitted() {
        assert!(fit_stats(&Dataset::default()).is_err());
    }

    #[test]
    fn stats_serialise() {
        let stats = fit_stats(&sample()).unwrap();
        let s = serde_json::to_string(&stats).unwrap();
        let back: NormStats = serde_json::from_str(&s).unwrap();
        assert_eq!(back, stats);
    }
}
