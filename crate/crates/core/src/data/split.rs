use super::{DataError, Dataset};
use crate::seeds::{self, Stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.15,
            test: 0.15,
        }
    }
}

/// Entity-level split into (train, valid, test).
///
/// Entities are shuffled with the split stream of `seed`, then cut at the
/// rounded cumulative fractions.
pub fn split(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let SplitFractions { train, valid, test } = fractions;
    if [train, valid, test].iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(DataError::Split(format!("fractions must lie in [0, 1], got {fractions:?}")));
    }
    if ((train + valid + test) - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!("fractions must sum to 1, got {}", train + valid + test)));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, Stream::Split));
    let c1 = ((train * n as f64).round() as usize).min(n);
    let c2 = (((train + valid) * n as f64).round() as usize).clamp(c1, n);
    let parts = [(train, 0, c1, "train"), (valid, c1, c2, "valid"), (test, c2, n, "test")];
    for (f, lo, hi, name) in parts {
        if f > 0.0 && hi == lo {
            return Err(DataError::Split(format!("{name} fraction {f} leaves the split empty for {n} entities")));
        }
    }
    let take = |lo: usize, hi: usize| Dataset {
        trajectories: order[lo..hi].iter().map(|&i| dataset.trajectories[i].clone()).collect(),
    };
    Ok((take(0, c1), take(c1, c2), take(c2, n)))
}
