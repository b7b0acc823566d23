//! Pseudo-counterfactual generation by flipping one treatment per step.
//!
//! The chosen treatment bit is inverted and its feature column is reflected
//! `v -> 1 - v`. Flipping twice restores the bit exactly and the feature to
//! within one ulp; undoing through a record restores both bit-exactly.

use crate::data::Trajectory;
use crate::json;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorruptError {
    #[error("feature v[{d}][{k}] = {value} at t={t} lies outside [0, 1]; normalise before corrupting")]
    OutOfRange { t: usize, d: usize, k: usize, value: f64 },
    #[error("cannot corrupt {positions} positions of {k} treatments")]
    Positions { positions: usize, k: usize },
    #[error("record for t={t} does not fit the trajectory")]
    Mismatch { t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Distinct treatments flipped per step.
    pub positions: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self { positions: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    /// 1-based step index.
    pub t: usize,
    /// 0-based treatment index.
    pub k: usize,
    pub a: u8,
    pub v: Vec<f64>,
    pub a_corrupted: u8,
    pub v_corrupted: Vec<f64>,
}

/// Flips treatment `k` in place and returns the record.
pub fn corrupt_at(t: usize, v: &mut [Vec<f64>], a: &mut [u8], k: usize) -> Result<CorruptionRecord, CorruptError> {
    for (d, row) in v.iter().enumerate() {
        let value = row[k];
        if !(0.0..=1.0).contains(&value) {
            return Err(CorruptError::OutOfRange { t, d, k, value });
        }
    }
    let original_v: Vec<f64> = v.iter().map(|row| row[k]).collect();
    let original_a = a[k];
    a[k] = 1 - a[k];
    for row in v.iter_mut() {
        row[k] = 1.0 - row[k];
    }
    Ok(CorruptionRecord {
        t,
        k,
        a: original_a,
        v: original_v,
        a_corrupted: a[k],
        v_corrupted: v.iter().map(|row| row[k]).collect(),
    })
}

/// Corrupts one uniformly chosen position of step `t`.
pub fn corrupt_step<R: Rng>(
    t: usize,
    v: &[Vec<f64>],
    a: &[u8],
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<u8>, CorruptionRecord), CorruptError> {
    if a.is_empty() {
        return Err(CorruptError::Positions { positions: 1, k: 0 });
    }
    let k = rng.random_range(0..a.len());
    let (mut v, mut a) = (v.to_vec(), a.to_vec());
    let record = corrupt_at(t, &mut v, &mut a, k)?;
    Ok((v, a, record))
}

/// Corrupts every step independently. `x` and `y` are left untouched.
pub fn corrupt_trajectory<R: Rng>(
    traj: &Trajectory,
    config: CorruptionConfig,
    rng: &mut R,
) -> Result<(Trajectory, Vec<CorruptionRecord>), CorruptError> {
    let k = traj.dims().map_or(0, |d| d.k);
    if config.positions == 0 || config.positions > k {
        return Err(CorruptError::Positions { positions: config.positions, k });
    }
    let mut out = traj.clone();
    let mut records = Vec::with_capacity(traj.len() * config.positions);
    for (i, step) in out.steps.iter_mut().enumerate() {
        if config.positions == 1 {
            let (v, a, r) = corrupt_step(i + 1, &step.v, &step.a, rng)?;
            step.v = v;
            step.a = a;
            records.push(r);
        } else {
            let mut chosen = index::sample(rng, k, config.positions).into_vec();
            chosen.sort_unstable();
            for pos in chosen {
                records.push(corrupt_at(i + 1, &mut step.v, &mut step.a, pos)?);
            }
        }
    }
    Ok((out, records))
}

/// Re-applies records in reverse order, undoing a corruption.
pub fn apply_records(traj: &Trajectory, records: &[CorruptionRecord]) -> Result<Trajectory, CorruptError> {
    let mut out = traj.clone();
    for r in records.iter().rev() {
        let step = out.steps.get_mut(r.t.wrapping_sub(1)).ok_or(CorruptError::Mismatch { t: r.t })?;
        let current: Option<Vec<f64>> = step.v.iter().map(|row| row.get(r.k).copied()).collect();
        if step.a.get(r.k) != Some(&r.a_corrupted) || current.as_ref() != Some(&r.v_corrupted) {
            return Err(CorruptError::Mismatch { t: r.t });
        }
        step.a[r.k] = r.a;
        for (row, &orig) in step.v.iter_mut().zip(&r.v) {
            row[r.k] = orig;
        }
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[CorruptionRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        json::write_compact(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
