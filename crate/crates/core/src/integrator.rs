//! Half-explicit RK4 for the state DAE and its lexicographic forward
//! sensitivity system.
//!
//! Every Runge-Kutta stage re-solves the algebraic constraint for the stage
//! `w` (warm-started from the previous stage) and, when sensitivities are
//! requested, the LD-derivative constraint `g'(x, w, v; (X, W, 0)) = 0` for the
//! stage `W`. `f`, `g` and `h` are evaluated over [`LdScalar`]s whose state
//! slots carry the rows of `X` and `W`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lexcalc::{DirectionsMatrix, LdScalar};
use crate::model::{solve_algebraic, Block, Branching, DaeModel, NewtonOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegratorOptions {
    pub step: f64,
    pub newton: NewtonOptions,
    /// Largest number of nonsmooth nodes in `g` for which the branch
    /// enumeration fallback is attempted.
    pub branch_cap: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            newton: NewtonOptions::default(),
            branch_cap: 8,
        }
    }
}

/// Fixed-step grid from `t0` to `tf`; the last step is shortened to land on `tf`.
pub fn time_grid(t0: f64, tf: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if !(tf >= t0) {
        return Err(Error::InvalidArgument(format!("tf = {tf} precedes t0 = {t0}")));
    }
    let n = ((tf - t0) / step - 1e-9).ceil().max(0.0) as usize;
    let mut times: Vec<f64> = (0..n).map(|i| t0 + i as f64 * step).collect();
    times.push(tf);
    Ok(times)
}

/// Time-sampled state solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// Infinity norm of `g` at each sample.
    pub g_residuals: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_x(&self) -> &[f64] {
        self.x.last().expect("trajectory has at least one sample")
    }

    pub fn last_w(&self) -> &[f64] {
        self.w.last().expect("trajectory has at least one sample")
    }

    /// Index of the grid sample nearest `t`, if within `tol`.
    pub fn index_near(&self, t: f64, tol: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t);
        let mut best: Option<(usize, f64)> = None;
        for j in [i.saturating_sub(1), i.min(self.times.len() - 1)] {
            let d = (self.times[j] - t).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        best.filter(|&(_, d)| d <= tol).map(|(j, _)| j)
    }

    /// CSV with header `t,x_<name>...,w_<name>...,g_resid`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, model: &DaeModel, out: &mut W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(model.diff_states().iter().map(|n| format!("x_{n}")));
        header.extend(model.alg_states().iter().map(|n| format!("w_{n}")));
        header.push("g_resid".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.times[i])];
            row.extend(self.x[i].iter().map(|&v| fmt17(v)));
            row.extend(self.w[i].iter().map(|&v| fmt17(v)));
            row.push(fmt17(self.g_residuals[i]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Round-trippable scientific formatting with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// State trajectory with LD-sensitivities `X`, `W`, `Y` at every sample.
#[derive(Clone, Debug)]
pub struct SensitivityTrajectory {
    pub base: Trajectory,
    pub directions: DirectionsMatrix,
    pub x_sens: Vec<DMatrix<f64>>,
    pub w_sens: Vec<DMatrix<f64>>,
    pub y_sens: Vec<DMatrix<f64>>,
}

impl SensitivityTrajectory {
    /// Output L-sensitivity `S_y^L = Y M^-R` at sample `i`.
    pub fn output_l_sensitivity(&self, i: usize) -> DMatrix<f64> {
        self.directions.l_derivative(&self.y_sens[i])
    }

    /// Algebraic L-sensitivity `S_w^L = W M^-R` at sample `i`.
    pub fn alg_l_sensitivity(&self, i: usize) -> DMatrix<f64> {
        self.directions.l_derivative(&self.w_sens[i])
    }

    /// Flow L-sensitivity `X M^-R` at sample `i`.
    pub fn state_l_sensitivity(&self, i: usize) -> DMatrix<f64> {
        self.directions.l_derivative(&self.x_sens[i])
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ld_slots(vals: &[f64], sens: &DMatrix<f64>, extra: usize, unit_offset: Option<usize>) -> Vec<LdScalar> {
    let k = sens.ncols();
    vals.iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut dirs = Vec::with_capacity(k + extra);
            dirs.extend(sens.row(i).iter());
            dirs.extend(std::iter::repeat_n(0.0, extra));
            if let Some(off) = unit_offset {
                dirs[k + off + i] = 1.0;
            }
            LdScalar::new(v, dirs)
        })
        .collect()
}

fn rows_to_matrix(rows: &[LdScalar], cols: std::ops::Range<usize>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (i, s) in rows.iter().enumerate() {
        for (c, j) in cols.clone().enumerate() {
            m[(i, c)] = s.dirs()[j];
        }
    }
    m
}

fn singular_solve(t: f64, column: usize, jac: &DMatrix<f64>, rhs: &DMatrix<f64>, opts: &NewtonOptions) -> Result<DMatrix<f64>> {
    let cond = crate::model::condition_estimate(jac);
    if cond > opts.max_condition {
        return Err(Error::SensitivitySolve {
            t,
            column,
            message: format!("dg/dw is singular or ill-conditioned (condition {cond:e})"),
        });
    }
    jac.clone().lu().solve(rhs).ok_or_else(|| Error::SensitivitySolve {
        t,
        column,
        message: "singular linear solve".into(),
    })
}

/// Solve `g'(x, w, v; (X, W, 0)) = 0` for `W` (`n_w x k`), column by column in
/// lexicographic order. `guess` warm-starts the nonsmooth column iterations.
pub fn solve_sensitivity_algebraic(
    model: &DaeModel,
    t: f64,
    x: &[f64],
    w: &[f64],
    xs: &DMatrix<f64>,
    guess: Option<&DMatrix<f64>>,
    opts: &IntegratorOptions,
) -> Result<DMatrix<f64>> {
    let nw = model.n_w();
    let k = xs.ncols();
    if nw == 0 {
        return Ok(DMatrix::zeros(0, k));
    }
    if model.is_g_smooth() {
        // one factorization of dg/dw serves every column
        let zero_w = DMatrix::zeros(nw, k);
        let xl = ld_slots(x, xs, nw, None);
        let wl = ld_slots(w, &zero_w, nw, Some(0));
        let out = model.eval_block(Block::G, t, &xl, &wl)?;
        let gx_x = rows_to_matrix(&out, 0..k);
        let jac = rows_to_matrix(&out, k..k + nw);
        return singular_solve(t, 0, &jac, &(-gx_x), &opts.newton);
    }
    let mut ws = DMatrix::zeros(nw, k);
    for j in 0..k {
        let g0 = guess.map(|g| g.column(j).iter().copied().collect::<Vec<_>>());
        let col = solve_sensitivity_column(model, t, x, w, xs, &ws, j, g0.as_deref(), opts)?;
        ws.set_column(j, &DVector::from_vec(col));
    }
    Ok(ws)
}

/// Residual column `j` of `g'` and its L-derivative with respect to `W_j`,
/// for `W_j = wj` and the already-solved columns `0..j` of `ws`.
#[allow(clippy::too_many_arguments)]
fn column_residual(
    model: &DaeModel,
    t: f64,
    x: &[f64],
    w: &[f64],
    xs: &DMatrix<f64>,
    ws: &DMatrix<f64>,
    j: usize,
    wj: &[f64],
    branching: Branching,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let nw = model.n_w();
    let x_prefix = xs.columns(0, j + 1).into_owned();
    let mut w_prefix = ws.columns(0, j + 1).into_owned();
    for (i, &v) in wj.iter().enumerate() {
        w_prefix[(i, j)] = v;
    }
    let xl = ld_slots(x, &x_prefix, nw, None);
    let wl = ld_slots(w, &w_prefix, nw, Some(0));
    let out = model.eval_block_with(Block::G, t, &xl, &wl, None, branching)?;
    let r = out.iter().map(|s| s.dirs()[j]).collect();
    Ok((r, rows_to_matrix(&out, j + 1..j + 1 + nw)))
}

/// One column of the nonsmooth sensitivity constraint: semismooth Newton on
/// the piecewise-linear column map, with exhaustive branch enumeration as a
/// fallback when `g` has at most `branch_cap` nonsmooth nodes.
#[allow(clippy::too_many_arguments)]
pub fn solve_sensitivity_column(
    model: &DaeModel,
    t: f64,
    x: &[f64],
    w: &[f64],
    xs: &DMatrix<f64>,
    ws_prefix: &DMatrix<f64>,
    j: usize,
    guess: Option<&[f64]>,
    opts: &IntegratorOptions,
) -> Result<Vec<f64>> {
    let nw = model.n_w();
    let tol = opts.newton.tol * (1.0 + inf_norm(xs.column(j).as_slice()));
    let mut wj = guess.map_or_else(|| vec![0.0; nw], <[f64]>::to_vec);
    for _ in 0..opts.newton.max_iter {
        let (r, jac) = column_residual(model, t, x, w, xs, ws_prefix, j, &wj, Branching::Lexicographic)?;
        if inf_norm(&r) <= tol {
            return Ok(wj);
        }
        let Some(step) = jac.lu().solve(&DVector::from_vec(r)) else {
            break;
        };
        for (v, s) in wj.iter_mut().zip(step.iter()) {
            *v -= s;
        }
    }
    let n = model.g_nonsmooth_count();
    if n > opts.branch_cap || n >= 64 {
        return Err(Error::SensitivitySolve {
            t,
            column: j,
            message: format!("semismooth Newton did not converge and {n} nonsmooth nodes exceed the enumeration cap"),
        });
    }
    let zero = vec![0.0; nw];
    for mask in 0..(1u64 << n) {
        let (r0, jac) = column_residual(model, t, x, w, xs, ws_prefix, j, &zero, Branching::Forced(mask))?;
        let Some(sol) = jac.lu().solve(&DVector::from_vec(r0)) else {
            continue;
        };
        let cand: Vec<f64> = sol.iter().map(|v| -v).collect();
        let (r, _) = column_residual(model, t, x, w, xs, ws_prefix, j, &cand, Branching::Lexicographic)?;
        if inf_norm(&r) <= tol {
            return Ok(cand);
        }
    }
    Err(Error::BranchExhausted { t, column: j })
}

struct StageOut {
    w: Vec<f64>,
    resid: f64,
    ws: Option<DMatrix<f64>>,
}

struct Integrator<'a> {
    model: &'a DaeModel,
    opts: &'a IntegratorOptions,
}

impl Integrator<'_> {
    fn algebraic(
        &self,
        t: f64,
        x: &[f64],
        w_guess: &[f64],
        xs: Option<&DMatrix<f64>>,
        ws_guess: Option<&DMatrix<f64>>,
    ) -> Result<StageOut> {
        let (w, resid) = solve_algebraic(self.model, t, x, w_guess, &self.opts.newton)?;
        let ws = match xs {
            Some(xs) => Some(solve_sensitivity_algebraic(self.model, t, x, &w, xs, ws_guess, self.opts)?),
            None => None,
        };
        Ok(StageOut { w, resid, ws })
    }

    fn derivative(
        &self,
        t: f64,
        x: &[f64],
        w: &[f64],
        xs: Option<&DMatrix<f64>>,
        ws: Option<&DMatrix<f64>>,
    ) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
        match (xs, ws) {
            (Some(xs), Some(ws)) => {
                let xl = ld_slots(x, xs, 0, None);
                let wl = ld_slots(w, ws, 0, None);
                let out = self.model.eval_block(Block::F, t, &xl, &wl)?;
                let k = xs.ncols();
                Ok((out.iter().map(|s| s.value()).collect(), Some(rows_to_matrix(&out, 0..k))))
            }
            _ => Ok((self.model.f(t, x, w)?, None)),
        }
    }

    fn output_sens(&self, t: f64, x: &[f64], w: &[f64], xs: &DMatrix<f64>, ws: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let xl = ld_slots(x, xs, 0, None);
        let wl = ld_slots(w, ws, 0, None);
        let out = self.model.eval_block(Block::H, t, &xl, &wl)?;
        Ok(rows_to_matrix(&out, 0..xs.ncols()))
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        t0: f64,
        tf: f64,
        x0: &[f64],
        w0: &[f64],
        m: Option<&DirectionsMatrix>,
    ) -> Result<(Trajectory, Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)>)> {
        let model = self.model;
        if x0.len() != model.n_x() || w0.len() != model.n_w() {
            return Err(Error::InvalidArgument("initial condition lengths do not match the model".into()));
        }
        if let Some(m) = m {
            if m.n_x() != model.n_x() {
                return Err(Error::InvalidArgument(format!(
                    "directions matrix has {} rows for {} differential states",
                    m.n_x(),
                    model.n_x()
                )));
            }
        }
        let times = time_grid(t0, tf, self.opts.step)?;
        let g0 = inf_norm(&model.g(t0, x0, w0)?);
        if g0 > self.opts.newton.tol {
            return Err(Error::InvalidArgument(format!(
                "initial conditions are not consistent: |g| = {g0:e}"
            )));
        }

        let mut x = x0.to_vec();
        let mut w = w0.to_vec();
        let mut xs = m.map(|m| m.entries().clone());
        let mut ws = match &xs {
            Some(xs) => Some(solve_sensitivity_algebraic(model, t0, &x, &w, xs, None, self.opts)?),
            None => None,
        };

        let mut traj = Trajectory {
            times: times.clone(),
            x: vec![x.clone()],
            w: vec![w.clone()],
            g_residuals: vec![g0],
        };
        let mut sens = match (&xs, &ws) {
            (Some(xm), Some(wm)) => Some((
                vec![xm.clone()],
                vec![wm.clone()],
                vec![self.output_sens(t0, &x, &w, xm, wm)?],
            )),
            _ => None,
        };

        for win in times.windows(2) {
            let (t, tn) = (win[0], win[1]);
            let h = tn - t;
            let axpy = |base: &[f64], k: &[f64], a: f64| -> Vec<f64> {
                base.iter().zip(k).map(|(b, d)| b + a * d).collect()
            };
            let maxpy = |base: &Option<DMatrix<f64>>, k: &Option<DMatrix<f64>>, a: f64| match (base, k) {
                (Some(b), Some(d)) => Some(b + d * a),
                _ => None,
            };

            let (k1, kx1) = self.derivative(t, &x, &w, xs.as_ref(), ws.as_ref())?;

            let x2 = axpy(&x, &k1, 0.5 * h);
            let xs2 = maxpy(&xs, &kx1, 0.5 * h);
            let s2 = self.algebraic(t + 0.5 * h, &x2, &w, xs2.as_ref(), ws.as_ref())?;
            let (k2, kx2) = self.derivative(t + 0.5 * h, &x2, &s2.w, xs2.as_ref(), s2.ws.as_ref())?;

            let x3 = axpy(&x, &k2, 0.5 * h);
            let xs3 = maxpy(&xs, &kx2, 0.5 * h);
            let s3 = self.algebraic(t + 0.5 * h, &x3, &s2.w, xs3.as_ref(), s2.ws.as_ref())?;
            let (k3, kx3) = self.derivative(t + 0.5 * h, &x3, &s3.w, xs3.as_ref(), s3.ws.as_ref())?;

            let x4 = axpy(&x, &k3, h);
            let xs4 = maxpy(&xs, &kx3, h);
            let s4 = self.algebraic(tn, &x4, &s3.w, xs4.as_ref(), s3.ws.as_ref())?;
            let (k4, kx4) = self.derivative(tn, &x4, &s4.w, xs4.as_ref(), s4.ws.as_ref())?;

            x = (0..x.len())
                .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            if let (Some(xm), Some(a), Some(b), Some(c), Some(d)) = (&xs, &kx1, &kx2, &kx3, &kx4) {
                xs = Some(xm + (a + b * 2.0 + c * 2.0 + d) * (h / 6.0));
            }
            let sn = self.algebraic(tn, &x, &s4.w, xs.as_ref(), s4.ws.as_ref())?;
            w = sn.w;
            ws = sn.ws;

            traj.x.push(x.clone());
            traj.w.push(w.clone());
            traj.g_residuals.push(sn.resid);
            if let (Some((xv, wv, yv)), Some(xm), Some(wm)) = (sens.as_mut(), &xs, &ws) {
                xv.push(xm.clone());
                wv.push(wm.clone());
                yv.push(self.output_sens(tn, &x, &w, xm, wm)?);
            }
        }
        Ok((traj, sens))
    }
}

/// Integrate the state DAE on `[t0, tf]` from consistent `(x0, w0)`.
pub fn integrate_dae(
    model: &DaeModel,
    t0: f64,
    tf: f64,
    x0: &[f64],
    w0: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    Integrator { model, opts }.run(t0, tf, x0, w0, None).map(|(t, _)| t)
}

/// Integrate the state DAE together with its LD-sensitivities, `X(t0) = M`.
pub fn integrate_sensitivity(
    model: &DaeModel,
    t0: f64,
    tf: f64,
    x0: &[f64],
    w0: &[f64],
    m: &DirectionsMatrix,
    opts: &IntegratorOptions,
) -> Result<SensitivityTrajectory> {
    let (base, sens) = Integrator { model, opts }.run(t0, tf, x0, w0, Some(m))?;
    let (x_sens, w_sens, y_sens) = sens.expect("sensitivities requested");
    Ok(SensitivityTrajectory {
        base,
        directions: m.clone(),
        x_sens,
        w_sens,
        y_sens,
    })
}
