//! Training objective on a tape.
//!
//! The tape differentiates `J = L_y + λ1 L_a + λ2 L_d` with a gradient
//! reversal between the representation and the classifiers, so classifier
//! weights descend `L_a` while the representation ascends it. The reported
//! total is `L_y - λ1 L_a + λ2 L_d`, whose gradient the tape reproduces for
//! every non-classifier parameter.

use crate::autodiff::{AdResult, Bound, Gradients, Tape, Tensor, Var, NUMERIC_FLOOR};
use crate::net::{Batch, TcfNet};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_y")]
    pub l_y: f64,
    #[serde(rename = "L_a")]
    pub l_a: f64,
    #[serde(rename = "L_d")]
    pub l_d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_y: f64, l_a: f64, l_d: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            l_y,
            l_a,
            l_d,
            total: l_y - lambda1 * l_a + lambda2 * l_d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Minimise `log f_F - log f_CF` (factual close to its anchor).
    pub invert_ratio: bool,
    /// Keep only contrastive terms of treatments that are on.
    pub mask_inactive: bool,
    /// Lower clamp of each contrastive distance before the logarithm.
    pub distance_floor: f64,
}

/// A recorded objective ready for differentiation.
pub struct Objective {
    pub tape: Tape,
    pub bound: Bound,
    pub j: Var,
    pub breakdown: LossBreakdown,
    /// Squared-error sum and count behind `L_y`.
    pub sse: f64,
    pub count: f64,
}

impl Objective {
    pub fn gradients(&self) -> AdResult<Gradients> {
        self.tape.backward(self.j)
    }

    /// Gradient of every parameter in store order.
    pub fn param_gradients(&self) -> AdResult<Vec<Tensor>> {
        let g = self.gradients()?;
        Ok(self.bound.vars().iter().map(|v| g.get(*v)).collect())
    }
}

fn masked_mean(tape: &mut Tape, values: Var, mask: &Tensor) -> AdResult<(Var, f64)> {
    let count = mask.sum();
    let m = tape.constant(mask.clone());
    let masked = tape.mul(values, m)?;
    let s = tape.sum(masked)?;
    Ok((tape.scale(s, 1.0 / count.max(1.0))?, count))
}

fn column(t: &Tensor, c: usize) -> Tensor {
    Tensor::column((0..t.rows()).map(|r| t.get(r, c)).collect())
}

/// `Σ_k -log p_k[a_k]` per row.
fn classification_nll(tape: &mut Tape, probs: &[Var], a: &Tensor) -> AdResult<Var> {
    let mut total: Option<Var> = None;
    for (k, &p) in probs.iter().enumerate() {
        let bits = column(a, k);
        let onehot = Tensor::matrix(a.rows(), 2, bits.values().iter().flat_map(|&b| [1.0 - b, b]).collect());
        let onehot = tape.constant(onehot);
        let logp = tape.log(p)?;
        let picked = tape.mul(logp, onehot)?;
        let row = tape.sum_cols(picked)?;
        let nll = tape.scale(row, -1.0)?;
        total = Some(match total {
            Some(t) => tape.add(t, nll)?,
            None => nll,
        });
    }
    Ok(total.expect("at least one treatment"))
}

/// `L_a` of one stream, routed through a unit gradient reversal.
pub fn stream_classification(net: &TcfNet, tape: &mut Tape, b: &Bound, reps: Var, a: &Tensor, mask: &Tensor, reversed: bool) -> AdResult<Var> {
    let input = if reversed { tape.gradient_reversal(reps, 1.0)? } else { reps };
    let probs = net.build_classifiers(tape, b, input)?;
    let nll = classification_nll(tape, &probs, a)?;
    Ok(masked_mean(tape, nll, mask)?.0)
}

fn floored_l1(tape: &mut Tape, diff: Var, floor: f64) -> AdResult<Var> {
    let a = tape.abs(diff)?;
    let s = tape.sum_cols(a)?;
    tape.clamp_min(s, floor.max(NUMERIC_FLOOR))
}

/// Per-row contrastive sum over `k = 0..K`.
fn infonce_rows(tape: &mut Tape, z: Var, y_f: Var, y_cf: Var, a: &Tensor, y_next: &Tensor, d_z: usize, cfg: &ObjectiveConfig) -> AdResult<Var> {
    let k_count = a.cols();
    let rows = a.rows();
    let none: Tensor = Tensor::column((0..rows).map(|r| (0..k_count).all(|k| a.get(r, k) == 0.0) as u8 as f64).collect());
    let mut total: Option<Var> = None;
    for k in 0..=k_count {
        // k = 0 is the no-treatment term with a constant unit medium representation.
        let (gate, zk) = if k == 0 {
            (none.clone(), None)
        } else {
            (column(a, k - 1), Some(tape.slice_cols(z, (k - 1) * d_z, d_z)?))
        };
        let target = Tensor::column(gate.values().iter().zip(y_next.values()).map(|(g, y)| g * y).collect());
        let target = tape.constant(target);
        let f = |tape: &mut Tape, y_hat: Var| -> AdResult<Var> {
            let (pred, anchor) = match zk {
                Some(zk) => (tape.mul(zk, y_hat)?, tape.mul(zk, target)?),
                None => (y_hat, target),
            };
            let d = tape.sub(pred, anchor)?;
            floored_l1(tape, d, cfg.distance_floor)
        };
        let f_f = f(tape, y_f)?;
        let f_cf = f(tape, y_cf)?;
        let log_f = tape.log(f_f)?;
        let log_cf = tape.log(f_cf)?;
        let mut term = if cfg.invert_ratio { tape.sub(log_f, log_cf)? } else { tape.sub(log_cf, log_f)? };
        if cfg.mask_inactive {
            let g = tape.constant(gate);
            term = tape.mul(term, g)?;
        }
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("k = 0 term"))
}

pub fn build_objective(net: &TcfNet, batch: &Batch, cfg: &ObjectiveConfig) -> AdResult<Objective> {
    let mut tape = Tape::new();
    let b = net.store.bind(&mut tape);
    let t = &mut tape;

    let inputs: Vec<Var> = batch.factual.inputs.iter().map(|x| t.constant(x.clone())).collect();
    let tops = net.build_encoder(t, &b, &inputs)?;
    let reps = t.concat_rows(&tops)?;
    let a = t.constant(batch.factual.a.clone());

    let later: Vec<(Var, Var)> = batch
        .decoder
        .iter()
        .map(|d| (t.constant(d.rest.clone()), t.constant(d.a.clone())))
        .collect();
    let preds = net.build_rollout(t, &b, reps, a, &later)?;

    let mut sq_terms = Vec::with_capacity(preds.len());
    let mut count = 0.0;
    let targets = std::iter::once((&batch.next_y, &batch.next_mask)).chain(batch.decoder.iter().map(|d| (&d.target, &d.mask)));
    for (&p, (y, mask)) in preds.iter().zip(targets) {
        let yv = t.constant(y.clone());
        let e = t.sub(p, yv)?;
        let sq = t.mul(e, e)?;
        let m = t.constant(mask.clone());
        let sq = t.mul(sq, m)?;
        sq_terms.push(t.sum(sq)?);
        count += mask.sum();
    }
    let mut sse = sq_terms[0];
    for &s in &sq_terms[1..] {
        sse = t.add(sse, s)?;
    }
    let l_y = t.scale(sse, 1.0 / f64::max(count, 1.0))?;

    let la_f = stream_classification(net, t, &b, reps, &batch.factual.a, &batch.step_mask, true)?;
    let (l_a, l_d) = match &batch.corrupted {
        Some(cf) => {
            let inputs: Vec<Var> = cf.inputs.iter().map(|x| t.constant(x.clone())).collect();
            let tops = net.build_encoder(t, &b, &inputs)?;
            let reps_cf = t.concat_rows(&tops)?;
            let la_cf = stream_classification(net, t, &b, reps_cf, &cf.a, &batch.step_mask, true)?;
            let sum = t.add(la_f, la_cf)?;
            let l_a = t.scale(sum, 0.5)?;

            let a_cf = t.constant(cf.a.clone());
            let y_cf = net.build_outcome(t, &b, reps_cf, a_cf)?;
            let z = net.build_medium(t, &b, reps, a)?;
            let rows = infonce_rows(t, z, preds[0], y_cf, &batch.factual.a, &batch.next_y, net.config.d_z, cfg)?;
            let (l_d, _) = masked_mean(t, rows, &batch.next_mask)?;
            (l_a, Some(l_d))
        }
        None => (la_f, None),
    };

    let mut j = l_y;
    if cfg.lambda1 != 0.0 {
        let s = t.scale(l_a, cfg.lambda1)?;
        j = t.add(j, s)?;
    }
    if let (Some(l_d), true) = (l_d, cfg.lambda2 != 0.0) {
        let s = t.scale(l_d, cfg.lambda2)?;
        j = t.add(j, s)?;
    }
    let ld_value = l_d.map_or(0.0, |v| t.value(v).item());
    let breakdown = LossBreakdown::new(t.value(l_y).item(), t.value(l_a).item(), ld_value, cfg.lambda1, cfg.lambda2);
    let sse_value = t.value(sse).item();
    Ok(Objective {
        tape,
        bound: b,
        j,
        breakdown,
        sse: sse_value,
        count,
    })
}

/// Pure-arithmetic forms of the three losses on plain numbers.
pub mod reference {
    use crate::autodiff::NUMERIC_FLOOR;

    /// `-Σ_k log p_k[a_k]` for one step, probabilities floored.
    pub fn treatment_nll(probs: &[[f64; 2]], a: &[u8]) -> f64 {
        probs
            .iter()
            .zip(a)
            .map(|(p, &bit)| -p[bit as usize].max(NUMERIC_FLOOR).ln())
            .sum()
    }

    pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
        pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len().max(1) as f64
    }

    /// `-Σ_k log(f_F,k / f_CF,k)`, or its negation when `invert`.
    pub fn infonce(f_factual: &[f64], f_counterfactual: &[f64], invert: bool) -> f64 {
        let literal: f64 = f_factual
            .iter()
            .zip(f_counterfactual)
            .map(|(f, c)| -(f.max(NUMERIC_FLOOR) / c.max(NUMERIC_FLOOR)).ln())
            .sum();
        if invert { -literal } else { literal }
    }
}

#[cfg(test)]
mod tests {
    use super::reference::*;
    use super::*;
    use std::f64::consts::{E, LN_2};

    #[test]
    fn treatment_loss_examples() {
        assert!(treatment_nll(&[[0.0, 1.0], [1.0, 0.0]], &[1, 0]).abs() < 1e-12);
        assert!((treatment_nll(&[[0.5, 0.5], [0.5, 0.5]], &[1, 0]) - 2.0 * LN_2).abs() < 1e-15);
        // K = 1 hand arithmetic: -ln 0.8
        assert!((treatment_nll(&[[0.2, 0.8]], &[1]) - 0.2231435513142097).abs() < 1e-15);
    }

    #[test]
    fn outcome_loss_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(mse(&[0.0], &[2.0]), 4.0);
    }

    #[test]
    fn infonce_examples() {
        assert_eq!(infonce(&[0.3, 2.0, 1.1], &[0.3, 2.0, 1.1], false), 0.0);
        assert!((infonce(&[1.0], &[E], false) - 1.0).abs() < 1e-15);
        assert!((infonce(&[1.0], &[E], true) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn breakdown_recombines() {
        let b = LossBreakdown::new(0.7, 1.3, -0.4, 0.25, 0.5);
        assert!((b.total - (0.7 - 0.25 * 1.3 + 0.5 * -0.4)).abs() < 1e-15);
        let j = serde_json::to_value(b).unwrap();
        assert!(j.get("L_y").is_some() && j.get("total").is_some());
    }
}
