//! Sensitivity-based extended Kalman filter.
//!
//! The covariance `P` lives on the differential states. Between measurements
//! it is propagated with the interval flow L-derivative `Φ = X(t_k) M^-R`
//! and the output matrix is `C = Y(t_k) M^-R Φ^-1`, both from one
//! sensitivity integration started at `X(t_{k-1}) = M`. Each interval is also checked with
//! the L-SERC test; gain rows of the non-observable states are zeroed, and the
//! algebraic states are restored by a consistency solve after every update.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{
    fmt17, integrate_dae, integrate_sensitivity, time_grid, IntegratorOptions, SensitivityTrajectory,
    Trajectory,
};
use crate::lexcalc::DirectionsMatrix;
use crate::linalg::{pd_factor, psd_factor, symmetrize};
use crate::model::{consistent_init, solve_algebraic, DaeModel, NewtonOptions};
use crate::observability::{axis_probes, run_lserc, uniform_samples, ObservabilityOptions};

/// Process covariance `Q` (per unit time), measurement covariance `R`, seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    /// `Q = q·I`, `R = r·I`.
    pub fn diagonal(model: &DaeModel, q: f64, r: f64, seed: u64) -> Self {
        Self {
            q: DMatrix::identity(model.n_x(), model.n_x()) * q,
            r: DMatrix::identity(model.n_y(), model.n_y()) * r,
            seed,
        }
    }

    fn check_shapes(&self, model: &DaeModel) -> Result<()> {
        if self.q.shape() != (model.n_x(), model.n_x()) {
            return Err(Error::Noise(format!(
                "Q must be {0}x{0}, got {1}x{2}",
                model.n_x(),
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        if self.r.shape() != (model.n_y(), model.n_y()) {
            return Err(Error::Noise(format!(
                "R must be {0}x{0}, got {1}x{2}",
                model.n_y(),
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        Ok(())
    }
}

/// Output measurements `y_m(t_k)`, `k = 1..n_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSeries {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,y_<name>...`.
    pub fn write_csv<W: Write>(&self, model: &DaeModel, out: &mut W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(model.outputs().iter().map(|n| format!("y_{n}")));
        writeln!(out, "{}", header.join(","))?;
        for (t, v) in self.times.iter().zip(&self.values) {
            let mut row = vec![fmt17(*t)];
            row.extend(v.iter().map(|&x| fmt17(x)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Read a measurement CSV; lines starting with `#` are skipped. Columns
    /// are matched to outputs by header name.
    pub fn read_csv<R: Read>(model: &DaeModel, input: R) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("measurement file: {m}"));
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let t_col = col("t").ok_or_else(|| bad("missing column `t`".into()))?;
        let y_cols = model
            .outputs()
            .iter()
            .map(|n| col(&format!("y_{n}")).ok_or_else(|| bad(format!("missing column `y_{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut series = MeasurementSeries { times: Vec::new(), values: Vec::new() };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", rec.position().map_or(0, |p| p.line()))))
            };
            series.times.push(num(t_col)?);
            series.values.push(y_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
        }
        Ok(series)
    }

    fn validate(&self, model: &DaeModel, t0: f64) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("no measurements".into()));
        }
        if self.values.iter().any(|v| v.len() != model.n_y()) {
            return Err(Error::InvalidArgument("measurement width differs from output count".into()));
        }
        let mut prev = t0;
        for &t in &self.times {
            if !(t > prev) {
                return Err(Error::InvalidArgument(format!(
                    "measurement times must increase strictly after t0 = {t0}; got {t} after {prev}"
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Euler-Maruyama truth with seeded Gaussian process and measurement noise.
/// The generator is ChaCha8 seeded from `noise.seed`; each step draws `n_x`
/// process variates and each measurement `n_y` variates, in time order.
pub fn synthesize_truth(
    model: &DaeModel,
    noise: &NoiseSpec,
    t0: f64,
    tf: f64,
    dt_sim: f64,
    x0: &[f64],
    w0: &[f64],
    meas_times: &[f64],
    newton: &NewtonOptions,
) -> Result<(Trajectory, MeasurementSeries)> {
    noise.check_shapes(model)?;
    let lq = psd_factor(&noise.q)?;
    let lr = psd_factor(&noise.r)?;
    let grid = time_grid(t0, tf, dt_sim)?;
    let mut targets = Vec::with_capacity(meas_times.len());
    for &tm in meas_times {
        let i = grid.partition_point(|&s| s < tm);
        let cand = [i.saturating_sub(1), i.min(grid.len() - 1)];
        let j = cand
            .into_iter()
            .min_by(|&a, &b| (grid[a] - tm).abs().total_cmp(&(grid[b] - tm).abs()))
            .unwrap();
        if (grid[j] - tm).abs() > 0.5 * dt_sim + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "measurement time {tm} is outside [{t0}, {tf}]"
            )));
        }
        targets.push(j);
    }

    let (mut w, r0) = solve_algebraic(model, t0, x0, w0, newton)?;
    if (0..w.len()).any(|i| (w[i] - w0[i]).abs() > 1e-6 * (1.0 + w0[i].abs())) {
        return Err(Error::InvalidArgument(format!(
            "initial condition is not consistent (w0 = {w0:?}, root {w:?})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut draw = |n: usize| -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)))
    };
    let mut x = x0.to_vec();
    let mut traj = Trajectory {
        times: vec![t0],
        x: vec![x.clone()],
        w: vec![w.clone()],
        g_residuals: vec![r0],
    };
    let mut series = MeasurementSeries {
        times: Vec::new(),
        values: Vec::new(),
    };
    let mut next = 0;
    let mut measure = |i: usize, x: &[f64], w: &[f64], draw: &mut dyn FnMut(usize) -> DVector<f64>, series: &mut MeasurementSeries| -> Result<()> {
        while next < targets.len() && targets[next] == i {
            let y = DVector::from_vec(model.h(grid[i], x, w)?);
            let y = y + &lr * draw(model.n_y());
            series.times.push(meas_times[next]);
            series.values.push(y.iter().cloned().collect());
            next += 1;
        }
        Ok(())
    };
    measure(0, &x, &w, &mut draw, &mut series)?;
    for i in 1..grid.len() {
        let (t, tn) = (grid[i - 1], grid[i]);
        let dt = tn - t;
        let f = DVector::from_vec(model.f(t, &x, &w)?);
        let xi = draw(model.n_x());
        let xn = DVector::from_column_slice(&x) + f * dt + &lq * xi * dt.sqrt();
        x = xn.iter().cloned().collect();
        let (wn, res) = solve_algebraic(model, tn, &x, &w, newton)?;
        w = wn;
        traj.times.push(tn);
        traj.x.push(x.clone());
        traj.w.push(w.clone());
        traj.g_residuals.push(res);
        measure(i, &x, &w, &mut draw, &mut series)?;
    }
    Ok((traj, series))
}

/// Noiseless prediction of the state from `t_prev` to `t_k`.
pub fn predict(
    model: &DaeModel,
    x_prev: &[f64],
    w_prev: &[f64],
    t_prev: f64,
    t_k: f64,
    opts: &IntegratorOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tr = integrate_dae(model, t_prev, t_k, x_prev, w_prev, opts)?;
    Ok((tr.last_x().to_vec(), tr.last_w().to_vec()))
}

/// Result of one measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub y_pred: Vec<f64>,
    pub innovation: Vec<f64>,
    /// `Φ P Φ^T + Q Δt`.
    pub p_prior: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub g_residual: f64,
}

/// Measurement update at the end of `sens`, whose terminal state is the
/// prior. `nonobs_diff` lists differential states whose gain rows are zeroed.
pub fn measurement_update(
    model: &DaeModel,
    sens: &SensitivityTrajectory,
    p_prev: &DMatrix<f64>,
    noise: &NoiseSpec,
    y_m: &[f64],
    nonobs_diff: &[usize],
    newton: &NewtonOptions,
) -> Result<Update> {
    let n_x = model.n_x();
    let last = sens.base.len() - 1;
    let t_k = sens.base.times[last];
    let dt = t_k - sens.base.times[0];
    let x_prior = &sens.base.x[last];
    let w_prior = &sens.base.w[last];

    let phi = sens.state_l_sensitivity(last);
    // S_y^L(t_k) maps perturbations at t_{k-1}; right-multiplying by Φ^-1
    // refers it to the state at t_k, where P⁻ lives.
    let c = phi
        .transpose()
        .lu()
        .solve(&sens.output_l_sensitivity(last).transpose())
        .ok_or_else(|| Error::Linalg(format!("interval flow L-derivative is singular at t = {t_k}")))?
        .transpose();
    let p_prior = symmetrize(&(&phi * p_prev * phi.transpose() + &noise.q * dt));
    let y_pred = model.h(t_k, x_prior, w_prior)?;
    let innovation: Vec<f64> = y_m.iter().zip(&y_pred).map(|(m, p)| m - p).collect();

    let mut gain = DMatrix::zeros(n_x, model.n_y());
    if nonobs_diff.len() < n_x {
        let s = symmetrize(&(&noise.r + &c * &p_prior * c.transpose()));
        let chol = s.cholesky().ok_or_else(|| {
            Error::Linalg(format!("innovation covariance is not positive definite at t = {t_k}"))
        })?;
        // L = P C^T S^-1 = (S^-1 C P)^T since S and P are symmetric
        gain = chol.solve(&(&c * &p_prior)).transpose();
        for &i in nonobs_diff {
            gain.row_mut(i).fill(0.0);
        }
    }

    let (x, w, g_residual) = if gain.iter().all(|&v| v == 0.0) {
        let r = model.g(t_k, x_prior, w_prior)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (x_prior.clone(), w_prior.clone(), r)
    } else {
        let dx = &gain * DVector::from_column_slice(&innovation);
        let x: Vec<f64> = x_prior.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
        let (w, r) = solve_algebraic(model, t_k, &x, w_prior, newton)?;
        (x, w, r)
    };
    // Joseph form: stays PSD when gain rows are zeroed, and equals
    // (I - LC)P⁻ for the unmodified optimal gain.
    let a = DMatrix::identity(n_x, n_x) - &gain * &c;
    let p = symmetrize(&(&a * &p_prior * a.transpose() + &gain * &noise.r * gain.transpose()));
    Ok(Update {
        x,
        w,
        y_pred,
        innovation,
        p_prior,
        p,
        c,
        gain,
        g_residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SekfConfig {
    pub p0: DMatrix<f64>,
    pub directions: DirectionsMatrix,
    pub observability: ObservabilityOptions,
}

impl SekfConfig {
    /// `M = I`, default tolerances.
    pub fn new(p0: DMatrix<f64>) -> Self {
        let n = p0.nrows();
        Self {
            p0,
            directions: DirectionsMatrix::identity(n),
            observability: ObservabilityOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterStep {
    pub t: f64,
    pub x_prior: Vec<f64>,
    pub w_prior: Vec<f64>,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub y_pred: Vec<f64>,
    pub innovation: Vec<f64>,
    pub c: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub g_residual: f64,
    /// Differential states the interval's L-SERC test marked non-observable.
    pub nonobs_diff: Vec<usize>,
    pub nonobs_alg: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterRun {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub w0: Vec<f64>,
    pub p0: DMatrix<f64>,
    pub steps: Vec<FilterStep>,
}

impl FilterRun {
    /// CSV with header `t,xbar_..,wbar_..,innov_..,P_<i>_<j>..,nonobs_flags`.
    /// `nonobs_flags` holds one `0`/`1` per state, differential then algebraic.
    pub fn write_csv<W: Write>(&self, model: &DaeModel, out: &mut W) -> io::Result<()> {
        let n_x = model.n_x();
        let mut header = vec!["t".to_string()];
        header.extend(model.diff_states().iter().map(|n| format!("xbar_{n}")));
        header.extend(model.alg_states().iter().map(|n| format!("wbar_{n}")));
        header.extend(model.outputs().iter().map(|n| format!("innov_{n}")));
        for i in 0..n_x {
            for j in 0..n_x {
                header.push(format!("P_{}_{}", i + 1, j + 1));
            }
        }
        header.push("nonobs_flags".into());
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            let mut row = vec![fmt17(s.t)];
            row.extend(s.x.iter().map(|&v| fmt17(v)));
            row.extend(s.w.iter().map(|&v| fmt17(v)));
            row.extend(s.innovation.iter().map(|&v| fmt17(v)));
            for i in 0..n_x {
                for j in 0..n_x {
                    row.push(fmt17(s.p[(i, j)]));
                }
            }
            let flags: String = (0..n_x)
                .map(|i| s.nonobs_diff.contains(&i))
                .chain((0..model.n_w()).map(|i| s.nonobs_alg.contains(&i)))
                .map(|b| if b { '1' } else { '0' })
                .collect();
            row.push(flags);
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Reproducibility record of a filter run.
#[derive(Clone, Debug, Serialize)]
pub struct FilterMetadata {
    pub seed: u64,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub p0: Vec<Vec<f64>>,
    pub directions_kind: crate::lexcalc::RightInverseKind,
    pub directions: Vec<Vec<f64>>,
    pub tolerances: ObservabilityOptions,
    pub rng: &'static str,
    pub interval_samples: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Samples per interval for the gating test: `max(2, ceil(n_x / n_y))`.
pub fn interval_samples(model: &DaeModel) -> usize {
    let n = model.n_x().div_ceil(model.n_y().max(1));
    n.max(2)
}

impl FilterMetadata {
    pub fn new(model: &DaeModel, noise: &NoiseSpec, config: &SekfConfig) -> Self {
        Self {
            seed: noise.seed,
            q: rows(&noise.q),
            r: rows(&noise.r),
            p0: rows(&config.p0),
            directions_kind: config.directions.kind(),
            directions: rows(config.directions.entries()),
            tolerances: config.observability,
            rng: "ChaCha8Rng::seed_from_u64 + StandardNormal",
            interval_samples: interval_samples(model),
        }
    }
}

/// Run the filter from `(x0, w0)` at `t0` over the measurement series.
/// On failure the error carries the steps completed so far.
pub fn run_sekf(
    model: &DaeModel,
    noise: &NoiseSpec,
    t0: f64,
    x0: &[f64],
    w0: &[f64],
    config: &SekfConfig,
    meas: &MeasurementSeries,
) -> Result<FilterRun> {
    let n_x = model.n_x();
    noise.check_shapes(model)?;
    pd_factor(&noise.r)?;
    psd_factor(&noise.q)?;
    if config.p0.shape() != (n_x, n_x) {
        return Err(Error::InvalidArgument(format!("P0 must be {n_x}x{n_x}")));
    }
    psd_factor(&config.p0)?;
    if config.directions.n_x() != n_x {
        return Err(Error::InvalidArgument("directions matrix row count differs from n_x".into()));
    }
    meas.validate(model, t0)?;
    let newton = config.observability.integrator.newton;
    let w0 = consistent_init(model, t0, x0, w0, &newton)?;

    let mut run = FilterRun {
        t0,
        x0: x0.to_vec(),
        w0: w0.clone(),
        p0: config.p0.clone(),
        steps: Vec::with_capacity(meas.len()),
    };
    let probes = axis_probes(n_x);
    let n_samples = interval_samples(model);
    let (mut x, mut w, mut p, mut t_prev) = (x0.to_vec(), w0, config.p0.clone(), t0);
    for (k, (&t_k, y_m)) in meas.times.iter().zip(&meas.values).enumerate() {
        let step = (|| -> Result<FilterStep> {
            let samples = uniform_samples(t_prev, t_k, n_samples);
            let report = run_lserc(model, &x, &w, &probes, &samples, &config.observability)?;
            let sens = integrate_sensitivity(
                model,
                t_prev,
                t_k,
                &x,
                &w,
                &config.directions,
                &config.observability.integrator,
            )?;
            let up = measurement_update(model, &sens, &p, noise, y_m, &report.chi_lno_indices, &newton)?;
            Ok(FilterStep {
                t: t_k,
                x_prior: sens.base.last_x().to_vec(),
                w_prior: sens.base.last_w().to_vec(),
                x: up.x,
                w: up.w,
                y_pred: up.y_pred,
                innovation: up.innovation,
                c: up.c,
                gain: up.gain,
                p: up.p,
                g_residual: up.g_residual,
                nonobs_diff: report.chi_lno_indices,
                nonobs_alg: report.alpha_lno_indices,
            })
        })();
        match step {
            Ok(s) => {
                x = s.x.clone();
                w = s.w.clone();
                p = s.p.clone();
                t_prev = t_k;
                run.steps.push(s);
            }
            Err(e) => {
                return Err(Error::FilterStep {
                    step: k + 1,
                    t: t_k,
                    source: Box::new(e),
                    partial: Box::new(run),
                })
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_expr, ModelDef};
    use std::collections::BTreeMap;

    fn scalar(a: f64, h: &str) -> DaeModel {
        DaeModel::new(ModelDef {
            name: "scalar".into(),
            diff_states: vec!["x".into()],
            alg_states: vec!["w".into()],
            outputs: vec!["y".into()],
            params: BTreeMap::from([("a".to_string(), a)]),
            inputs_u: BTreeMap::new(),
            inputs_v: BTreeMap::new(),
            f: vec![parse_expr("a * x").unwrap()],
            g: vec![parse_expr("w - x").unwrap()],
            h: vec![parse_expr(h).unwrap()],
            x0: vec![1.0],
            w0_guess: None,
        })
        .unwrap()
    }

    fn single(t: f64, y: f64) -> MeasurementSeries {
        MeasurementSeries { times: vec![t], values: vec![vec![y]] }
    }

    #[test]
    fn scalar_step_matches_textbook_kalman() {
        let a = -0.7;
        let m = scalar(a, "x");
        let noise = NoiseSpec::diagonal(&m, 0.3, 0.05, 0);
        let (dt, p0, y) = (0.1, 2.0, 0.8);
        let run = run_sekf(&m, &noise, 0.0, &[1.0], &[1.0], &SekfConfig::new(DMatrix::from_element(1, 1, p0)), &single(dt, y)).unwrap();
        let phi = (a * dt).exp();
        let xp = phi * 1.0;
        let pp = phi * p0 * phi + 0.3 * dt;
        let l = pp / (pp + 0.05);
        let s = &run.steps[0];
        assert!((s.x[0] - (xp + l * (y - xp))).abs() < 1e-9, "{s:?} {xp} {pp} {l}");
        assert!((s.p[(0, 0)] - (1.0 - l) * pp).abs() < 1e-9);
        assert!((s.gain[(0, 0)] - l).abs() < 1e-9);
        assert!((s.w[0] - s.x[0]).abs() <= 1e-10);
    }

    #[test]
    fn unobserved_state_gets_zero_gain() {
        let m = scalar(-1.0, "0 * x");
        let noise = NoiseSpec::diagonal(&m, 0.1, 0.1, 0);
        let run = run_sekf(&m, &noise, 0.0, &[1.0], &[1.0], &SekfConfig::new(DMatrix::identity(1, 1)), &single(0.1, 5.0)).unwrap();
        let s = &run.steps[0];
        assert_eq!(s.nonobs_diff, vec![0]);
        assert_eq!(s.gain[(0, 0)], 0.0);
        assert_eq!(s.x, s.x_prior);
        assert_eq!(s.w, s.w_prior);
    }

    #[test]
    fn huge_r_leaves_prior_nearly_unchanged() {
        let m = scalar(-1.0, "x");
        let mut noise = NoiseSpec::diagonal(&m, 0.1, 1e12, 0);
        noise.r[(0, 0)] = 1e12;
        let run = run_sekf(&m, &noise, 0.0, &[1.0], &[1.0], &SekfConfig::new(DMatrix::identity(1, 1)), &single(0.1, 5.0)).unwrap();
        let s = &run.steps[0];
        assert!(s.gain[(0, 0)].abs() <= 1e-9 * s.p[(0, 0)].max(1.0));
        assert!((s.x[0] - s.x_prior[0]).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_noise_and_times() {
        let m = scalar(-1.0, "x");
        let cfg = SekfConfig::new(DMatrix::identity(1, 1));
        let zero_r = NoiseSpec::diagonal(&m, 0.1, 0.0, 0);
        assert!(run_sekf(&m, &zero_r, 0.0, &[1.0], &[1.0], &cfg, &single(0.1, 1.0)).is_err());
        let ok = NoiseSpec::diagonal(&m, 0.1, 0.1, 0);
        assert!(run_sekf(&m, &ok, 0.0, &[1.0], &[1.0], &cfg, &single(0.0, 1.0)).is_err());
    }

    #[test]
    fn zero_noise_truth_is_deterministic_flow() {
        let m = scalar(-1.0, "x");
        let noise = NoiseSpec::diagonal(&m, 0.0, 0.0, 7);
        let times = uniform_samples(0.1, 1.0, 10);
        let (tr, ms) = synthesize_truth(&m, &noise, 0.0, 1.0, 1e-3, &[1.0], &[1.0], &times, &NewtonOptions::default()).unwrap();
        assert_eq!(tr.len(), 1001);
        // explicit Euler on x' = -x
        let euler = (1.0f64 - 1e-3).powi(1000);
        assert!((tr.last_x()[0] - euler).abs() < 1e-12);
        for (t, y) in ms.times.iter().zip(&ms.values) {
            let i = tr.index_near(*t, 1e-9).unwrap();
            assert_eq!(y[0], tr.x[i][0]);
        }
    }

    #[test]
    fn measurement_csv_round_trip() {
        let m = scalar(-1.0, "x");
        let noise = NoiseSpec::diagonal(&m, 1e-2, 1e-2, 3);
        let times = uniform_samples(0.1, 0.5, 5);
        let (_, ms) = synthesize_truth(&m, &noise, 0.0, 0.5, 1e-3, &[1.0], &[1.0], &times, &NewtonOptions::default()).unwrap();
        let mut buf = b"# comment\n".to_vec();
        ms.write_csv(&m, &mut buf).unwrap();
        let back = MeasurementSeries::read_csv(&m, buf.as_slice()).unwrap();
        assert_eq!(back, ms);
    }

    #[test]
    fn sample_count_clamped() {
        assert_eq!(interval_samples(&scalar(-1.0, "x")), 2);
    }
}
