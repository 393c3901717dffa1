//! Damped (semismooth) Newton for the algebraic constraint `g(x, w, v(t)) = 0`.

use nalgebra::{DMatrix, DVector};

use super::DaeModel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct NewtonOptions {
    /// Infinity-norm residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Condition estimates above this signal a regularity violation.
    pub max_condition: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_condition: 1e12,
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Condition number estimate from singular values; infinite when singular.
pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `g(x, w, v(t)) = 0` for `w` from `w_guess`. Returns the root and its
/// infinity-norm residual.
pub fn solve_algebraic(
    model: &DaeModel,
    t: f64,
    x: &[f64],
    w_guess: &[f64],
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, f64)> {
    let nw = model.n_w();
    if w_guess.len() != nw {
        return Err(Error::InvalidArgument(format!(
            "w guess has {} entries for {nw} algebraic states",
            w_guess.len()
        )));
    }
    if nw == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut w = w_guess.to_vec();
    let (mut r, mut jac) = model.g_and_jacobian_w(t, x, &w)?;
    for iter in 0..=opts.max_iter {
        let res = inf_norm(&r);
        if res <= opts.tol {
            return Ok((w, res));
        }
        if iter == opts.max_iter {
            break;
        }
        let cond = condition_estimate(&jac);
        if cond > opts.max_condition {
            return Err(Error::Regularity { t, condition: cond });
        }
        let step = jac
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or(Error::Regularity {
                t,
                condition: f64::INFINITY,
            })?;
        let norm0 = two_norm(&r);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, si)| wi - alpha * si).collect();
            if let Ok((rt, jt)) = model.g_and_jacobian_w(t, x, &trial) {
                if two_norm(&rt) <= (1.0 - 1e-4 * alpha) * norm0 {
                    accepted = Some((trial, rt, jt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((wn, rn, jn)) => {
                w = wn;
                r = rn;
                jac = jn;
            }
            None => {
                return Err(Error::NewtonFailed {
                    t,
                    residual: res,
                    iterations: iter + 1,
                })
            }
        }
    }
    Err(Error::NewtonFailed {
        t,
        residual: inf_norm(&r),
        iterations: opts.max_iter,
    })
}

/// Consistent algebraic initial condition `w0` at `(t0, x0)`.
pub fn consistent_init(
    model: &DaeModel,
    t0: f64,
    x0: &[f64],
    w_guess: &[f64],
    opts: &NewtonOptions,
) -> Result<Vec<f64>> {
    if x0.len() != model.n_x() {
        return Err(Error::InvalidArgument(format!(
            "x0 has {} entries for {} differential states",
            x0.len(),
            model.n_x()
        )));
    }
    solve_algebraic(model, t0, x0, w_guess, opts).map(|(w, _)| w)
}
