//! Trajectories, histories and datasets.
//!
//! Indexing: a trajectory holds steps `1..=T`. Step `t` carries the covariates
//! `x_t` and intervention features `v_t` observed before the decision, the
//! treatment bits `a_t` chosen at `t`, and the outcome `y_t` observed at `t`
//! (the result of `a_{t-1}`). Treatment `a_t` therefore drives `y_{t+1}`.

mod io;
mod norm;
mod split;

pub use io::{dataset_fingerprint, load_dataset, read_dataset, save_dataset, write_dataset, fmt_f64};
pub use norm::{denormalize, fit_stats, normalize, NormStats};
pub use split::{split, SplitFractions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trajectory `{entity}`: {reason}")]
    Inconsistent { entity: String, reason: String },
    #[error("history index {t} out of range 1..={len}")]
    HistoryOutOfRange { t: usize, len: usize },
    #[error("invalid split: {0}")]
    Split(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Feature dimensions shared by every trajectory of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_x: usize,
    pub d_v: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    pub x: Vec<f64>,
    /// `D_v x K`: `v[d][k]` is feature `d` of treatment `k`.
    pub v: Vec<Vec<f64>>,
    pub a: Vec<u8>,
    pub y: f64,
}

impl TimeStep {
    pub fn dims(&self) -> Dims {
        Dims {
            d_x: self.x.len(),
            d_v: self.v.len(),
            k: self.a.len(),
        }
    }

    /// Features of treatment `k` (column `k` of `v`).
    pub fn features_of(&self, k: usize) -> Vec<f64> {
        self.v.iter().map(|row| row[k]).collect()
    }

    /// Features flattened treatment-major: `[v[0][0], .., v[D_v-1][0], v[0][1], ..]`.
    pub fn flat_features(&self) -> Vec<f64> {
        let k = self.a.len();
        (0..k).flat_map(|j| self.v.iter().map(move |row| row[j])).collect()
    }

    fn validate(&self, dims: Dims) -> Result<(), String> {
        if self.dims() != dims {
            return Err(format!("dimensions {:?} differ from {:?}", self.dims(), dims));
        }
        if self.v.iter().any(|row| row.len() != dims.k) {
            return Err(format!("feature rows must have {} columns (one per treatment)", dims.k));
        }
        if self.a.iter().any(|&b| b > 1) {
            return Err("treatment bits must be 0 or 1".into());
        }
        let finite = self.x.iter().chain(self.v.iter().flatten()).all(|v| v.is_finite()) && self.y.is_finite();
        if !finite {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub entity_id: String,
    pub steps: Vec<TimeStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dims(&self) -> Option<Dims> {
        self.steps.first().map(TimeStep::dims)
    }

    pub fn validate(&self, dims: Dims) -> Result<(), DataError> {
        let bad = |reason: String| DataError::Inconsistent {
            entity: self.entity_id.clone(),
            reason,
        };
        if self.steps.len() < 2 {
            return Err(bad(format!("needs at least 2 steps, has {}", self.steps.len())));
        }
        for (i, s) in self.steps.iter().enumerate() {
            s.validate(dims).map_err(|r| bad(format!("step {}: {r}", i + 1)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self, DataError> {
        let ds = Self { trajectories };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dims(&self) -> Option<Dims> {
        self.trajectories.first().and_then(Trajectory::dims)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if let Some(dims) = self.dims() {
            for t in &self.trajectories {
                t.validate(dims)?;
            }
        }
        Ok(())
    }

    pub fn find(&self, entity_id: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.entity_id == entity_id)
    }

    /// Subset in the given order.
    pub fn select(&self, ids: &[String]) -> Dataset {
        Dataset {
            trajectories: ids.iter().filter_map(|id| self.find(id).cloned()).collect(),
        }
    }

    pub fn entity_ids(&self) -> Vec<String> {
        self.trajectories.iter().map(|t| t.entity_id.clone()).collect()
    }
}

/// Conditioning set at time `t`: treatments `1..t-1`, features and
/// covariates `1..t`, and the outcomes `1..t` observed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub t: usize,
    pub treatments: Vec<Vec<u8>>,
    pub features: Vec<Vec<Vec<f64>>>,
    pub covariates: Vec<Vec<f64>>,
    pub outcomes: Vec<f64>,
}

impl History {
    pub fn dims(&self) -> Dims {
        Dims {
            d_x: self.covariates[0].len(),
            d_v: self.features[0].len(),
            k: self.features[0].first().map_or(0, Vec::len),
        }
    }
}

/// History after the first `t` steps (`1 <= t <= T`). The treatment at `t` is excluded.
pub fn build_history(traj: &Trajectory, t: usize) -> Result<History, DataError> {
    if t == 0 || t > traj.len() {
        return Err(DataError::HistoryOutOfRange { t, len: traj.len() });
    }
    let steps = &traj.steps[..t];
    Ok(History {
        t,
        treatments: steps[..t - 1].iter().map(|s| s.a.clone()).collect(),
        features: steps.iter().map(|s| s.v.clone()).collect(),
        covariates: steps.iter().map(|s| s.x.clone()).collect(),
        outcomes: steps.iter().map(|s| s.y).collect(),
    })
}

/// Decoder bookkeeping for steps beyond the base history.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderContext {
    pub base: History,
    pub planned_treatments: Vec<Vec<u8>>,
    pub predicted_outcomes: Vec<f64>,
}

impl DecoderContext {
    pub fn new(base: History) -> Self {
        Self {
            base,
            planned_treatments: Vec::new(),
            predicted_outcomes: Vec::new(),
        }
    }
}

/// One planned step: the treatment bits applied and their features (`D_v x K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub a: Vec<u8>,
    pub v: Vec<Vec<f64>>,
}

/// Treatment bits as a bitmask, bit `k` set when treatment `k` is on.
pub fn treatment_mask(a: &[u8]) -> u32 {
    a.iter().enumerate().fold(0, |m, (k, &b)| m | ((b as u32 & 1) << k))
}

pub fn mask_to_bits(mask: u32, k: usize) -> Vec<u8> {
    (0..k).map(|j| ((mask >> j) & 1) as u8).collect()
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn history_at_one_is_treatment_free() {
        let tr = traj("a", 5, 0.0);
        let h = build_history(&tr, 1).unwrap();
        assert!(h.treatments.is_empty());
        assert_eq!(h.features.len(), 1);
        assert_eq!(h.covariates.len(), 1);
    }

    #[test]
    fn history_at_end() {
        let tr = traj("a", 5, 0.0);
        let h = build_history(&tr, 5).unwrap();
        assert_eq!(h.treatments.len(), 4);
        assert_eq!(h.features.len(), 5);
        assert_eq!(h.treatments[3], tr.steps[3].a);
    }

    #[test]
    fn history_out_of_range() {
        let tr = traj("a", 5, 0.0);
        assert!(matches!(build_history(&tr, 0), Err(DataError::HistoryOutOfRange { .. })));
        assert!(matches!(build_history(&tr, 6), Err(DataError::HistoryOutOfRange { .. })));
    }

    #[test]
    fn history_prefix_property_and_length_invariant() {
        let tr = traj("a", 8, 1.0);
        for t in 1..8 {
            let h = build_history(&tr, t).unwrap();
            let next = build_history(&tr, t + 1).unwrap();
            assert_eq!(h.treatments.len() + 1, h.covariates.len());
            assert_eq!(&next.treatments[..h.treatments.len()], &h.treatments[..]);
            assert_eq!(&next.features[..t], &h.features[..]);
            assert_eq!(&next.covariates[..t], &h.covariates[..]);
        }
    }

    #[test]
    fn mask_round_trip() {
        assert_eq!(treatment_mask(&[1, 0, 1]), 0b101);
        assert_eq!(mask_to_bits(0b101, 3), vec![1, 0, 1]);
    }

    #[test]
    fn rejects_short_or_bad_bits() {
        let mut tr = traj("a", 1, 0.0);
        assert!(Dataset::new(vec![tr.clone()]).is_err());
        tr = traj("a", 3, 0.0);
        tr.steps[1].a[0] = 2;
        assert!(Dataset::new(vec![tr]).is_err());
    }
}
