//! Central finite-difference checking of tape gradients.

use super::tape::{AdError, AdResult, Tape, Var};
use super::tensor::Tensor;

/// Worst disagreement found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

/// Denominator floor of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-12;

/// `max(|a - n| - noise, 0) / max(|a|, |n|, 1e-12)`.
///
/// `noise` is the resolution of the numeric estimate; disagreement below it
/// is not evidence of a wrong gradient.
pub fn relative_error(analytic: f64, numeric: f64, noise: f64) -> f64 {
    ((analytic - numeric).abs() - noise).max(0.0) / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Upper bound on the rounding error of a central difference with step
/// `eps` on a function whose value has magnitude `scale`.
pub fn central_difference_noise(scale: f64, eps: f64) -> f64 {
    64.0 * f64::EPSILON * scale.abs().max(1.0) / eps
}

/// Numeric gradient of `value` with respect to every entry of `params`.
pub fn central_differences(
    params: &mut [Tensor],
    eps: f64,
    mut value: impl FnMut(&[Tensor]) -> AdResult<f64>,
) -> AdResult<Vec<Tensor>> {
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].rows(), params[p].cols());
        for i in 0..params[p].len() {
            let orig = params[p].values()[i];
            params[p].values_mut()[i] = orig + eps;
            let plus = value(params);
            params[p].values_mut()[i] = orig - eps;
            let minus = value(params);
            params[p].values_mut()[i] = orig;
            g.values_mut()[i] = (plus? - minus?) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares analytic and numeric gradients entry by entry.
pub fn compare(analytic: &[Tensor], numeric: &[Tensor], noise: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (&av, &nv)) in a.values().iter().zip(n.values()).enumerate() {
            report.checked += 1;
            let e = relative_error(av, nv, noise);
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = e;
                report.worst = Some((p, i));
                report.analytic_at_worst = av;
                report.numeric_at_worst = nv;
            }
        }
    }
    report
}

/// Checks a scalar function built on a tape.
///
/// `build` receives a fresh tape plus one trainable leaf per parameter and
/// returns the scalar output node.
pub fn grad_check<F>(mut build: F, params: &[Tensor], eps: f64) -> AdResult<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> AdResult<Var>,
{
    if !(eps > 0.0) {
        return Err(AdError::InvalidArgument {
            op: "grad_check",
            reason: format!("eps must be positive, got {eps}"),
        });
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let f0 = tape.value(out).item();
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();

    let mut work = params.to_vec();
    let numeric = central_differences(&mut work, eps, |ps| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    })?;
    Ok(compare(&analytic, &numeric, central_difference_noise(f0, eps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::{Bound, GruParams, ParamGroup, ParamStore};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_of_three() {
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[Tensor::scalar(3.0)],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn dead_parameter_agrees_at_zero() {
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[Tensor::scalar(1.5), Tensor::row(vec![2.0, -1.0])],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let r = grad_check(|t, v| t.sum(v[0]), &[Tensor::scalar(1.0)], 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn gru_one_step_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let gru = GruParams::new(&mut store, "g", ParamGroup::Representation, 3, 4, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        let report = grad_check(
            |tape, vars| {
                let bound = Bound::from_vars(vars.to_vec());
                let xv = tape.constant(Tensor::matrix(2, 3, x.clone()));
                let hv = tape.constant(Tensor::matrix(2, 4, h.clone()));
                let out = gru.step(tape, &bound, xv, hv)?;
                let sq = tape.mul(out, out)?;
                tape.sum(sq)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    fn unary(op: u8) -> impl Fn(&mut Tape, Var) -> AdResult<Var> {
        move |t, x| match op {
            0 => t.sigmoid(x),
            1 => t.tanh(x),
            2 => t.exp(x),
            3 => {
                let a = t.abs(x)?;
                let a = t.add_scalar(a, 0.5)?;
                t.log(a)
            }
            4 => t.abs(x),
            5 => t.softmax(x),
            6 => t.sum_cols(x),
            7 => t.slice_cols(x, 1, 2),
            8 => t.gradient_reversal(x, 0.3),
            _ => t.scale(x, -1.7),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn unary_primitives_match_finite_differences(
            op in 0u8..10,
            vals in proptest::collection::vec(0.05f64..2.0, 6),
            signs in proptest::collection::vec(any::<bool>(), 6),
            weights in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let vals: Vec<f64> = vals.iter().zip(&signs).map(|(v, s)| if *s { *v } else { -*v }).collect();
            let f = unary(op);
            let report = grad_check(
                |t, v| {
                    let y = f(t, v[0])?;
                    let n = t.value(y).len();
                    let w = t.constant(Tensor::matrix(t.value(y).rows(), t.value(y).cols(), weights[..n].to_vec()));
                    let m = t.mul(y, w)?;
                    t.sum(m)
                },
                &[Tensor::matrix(2, 3, vals)],
                1e-6,
            ).unwrap();
            // Gradient reversal is deliberately not the derivative of its forward value.
            if op != 8 {
                prop_assert!(report.max_rel_error < 1e-6, "op {} {:?}", op, report);
            }
        }

        #[test]
        fn binary_primitives_match_finite_differences(
            op in 0u8..6,
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(0.2f64..2.0, 6),
        ) {
            let report = grad_check(
                |t, v| {
                    let y = match op {
                        0 => t.add(v[0], v[1])?,
                        1 => t.sub(v[0], v[1])?,
                        2 => t.mul(v[0], v[1])?,
                        3 => t.div(v[0], v[1])?,
                        4 => {
                            let m = t.concat_cols(&[v[0], v[1]])?;
                            let m = t.slice_cols(m, 1, 4)?;
                            let stacked = t.concat_rows(&[m, m])?;
                            t.tanh(stacked)?
                        }
                        _ => {
                            let bt = t.slice_cols(v[1], 0, 1)?;
                            let rhs = t_mat(t, v[1])?;
                            let prod = t.matmul(v[0], rhs)?;
                            let p = t.mul(prod, bt)?;
                            t.sigmoid(p)?
                        }
                    };
                    let sq = t.mul(y, y)?;
                    t.sum(sq)
                },
                &[Tensor::matrix(2, 3, a), Tensor::matrix(2, 3, b)],
                1e-6,
            ).unwrap();
            prop_assert!(report.max_rel_error < 1e-6, "op {} {:?}", op, report);
        }
    }

    // `[2,3]` -> `[3,1]` via slicing and concatenation so matmul has a partner shape.
    fn t_mat(t: &mut Tape, v: Var) -> AdResult<Var> {
        let a = t.slice_cols(v, 0, 1)?;
        let b = t.slice_cols(v, 1, 1)?;
        let c = t.concat_rows(&[a, b])?;
        let d = t.slice_cols(v, 2, 1)?;
        let e = t.concat_rows(&[c, d])?;
        // e is [6,1]; keep the first three rows
        let tr = t.constant(Tensor::matrix(3, 6, {
            let mut m = vec![0.0; 18];
            m[0] = 1.0;
            m[7] = 1.0;
            m[14] = 1.0;
            m
        }));
        t.matmul(tr, e)
    }
}
