//! Sensitivity rank condition (SERC / L-SERC) observability tests.
//!
//! For each probing direction the output L-sensitivities are sampled and
//! stacked into `Υ_d`. Full column rank certifies local observability; when
//! rank is deficient, the pivot columns of the row-reduced null-space basis
//! name the non-observable differential states, and the algebraic states
//! driven by them are flagged through `Ψ_{w_i}`.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DirectionLabel, Error, Result};
use crate::integrator::{integrate_sensitivity, IntegratorOptions, SensitivityTrajectory};
use crate::lexcalc::{DirectionsMatrix, RightInverseKind};
use crate::linalg::rref;
use crate::model::DaeModel;

/// Directions matrix used for one sensitivity integration.
#[derive(Clone, Debug, PartialEq)]
pub enum Probe {
    /// `M = [d  I]`.
    Direction(Vec<f64>),
    /// `M = I`, the classical smooth SERC.
    Identity,
}

impl Probe {
    pub fn matrix(&self, n_x: usize) -> Result<DirectionsMatrix> {
        match self {
            Probe::Identity => Ok(DirectionsMatrix::identity(n_x)),
            Probe::Direction(d) if d.len() == n_x => Ok(DirectionsMatrix::probing(d)),
            Probe::Direction(d) => Err(Error::InvalidArgument(format!(
                "direction has {} entries, model has {n_x} differential states",
                d.len()
            ))),
        }
    }

    pub fn label(&self) -> DirectionLabel {
        match self {
            Probe::Identity => DirectionLabel(None),
            Probe::Direction(d) => DirectionLabel(Some(d.clone())),
        }
    }
}

/// `{+e_1, -e_1, ..., +e_n, -e_n}`.
pub fn axis_probes(n_x: usize) -> Vec<Probe> {
    let mut out = Vec::with_capacity(2 * n_x);
    for i in 0..n_x {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n_x];
            d[i] = s;
            out.push(Probe::Direction(d));
        }
    }
    out
}

/// `count` uniformly spaced times on `[t0, tf]` (both ends included).
pub fn uniform_samples(t0: f64, tf: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![t0],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    tf
                } else {
                    t0 + (tf - t0) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObservabilityOptions {
    /// Relative singular value threshold: `σ_i > eps_rank · max(σ_1, 1)`.
    pub eps_rank: f64,
    /// Pivot threshold for row reduction of the null-space basis.
    pub eps_piv: f64,
    pub integrator: IntegratorOptions,
}

impl Default for ObservabilityOptions {
    fn default() -> Self {
        Self {
            eps_rank: 1e-6,
            eps_piv: 1e-8,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Stacked output L-sensitivities `Υ` for one directions matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LsercMatrix {
    /// Probing direction `d`, or `None` for `M = I` / general square `M`.
    pub direction: Option<Vec<f64>>,
    pub sample_times: Vec<f64>,
    /// `(N+1)·n_y x n_x`, row block `i` is `S_y^L(t_i)`.
    pub entries: DMatrix<f64>,
    /// Descending, `min(rows, n_x)` values.
    pub singular_values: Vec<f64>,
}

fn sample_indices(sens: &SensitivityTrajectory, sample_times: &[f64]) -> Result<Vec<usize>> {
    let times = &sens.base.times;
    let (t0, tf) = (times[0], *times.last().expect("non-empty trajectory"));
    let half = if times.len() > 1 {
        0.5 * times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    } else {
        0.0
    };
    let slack = 1e-12 * (1.0 + t0.abs().max(tf.abs()));
    sample_times
        .iter()
        .map(|&t| {
            if t < t0 - slack || t > tf + slack || !t.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "sample time {t} outside [{t0}, {tf}]"
                )));
            }
            sens.base.index_near(t, half + slack).ok_or_else(|| {
                Error::InvalidArgument(format!("sample time {t} is not on the integration grid"))
            })
        })
        .collect()
}

/// Descending singular values and matching right singular vectors (columns
/// of the returned `n x n` matrix). Rows are zero-padded to at least `n`.
fn full_svd(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Linalg("L-SERC matrix has non-finite entries".into()));
    }
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), a.shape()).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Linalg("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        v.set_column(c, &v_t.row(i).transpose());
    }
    Ok((sigma, v))
}

/// Stack `S_y^L(t_i)` for the given sample times.
pub fn build_lserc(sens: &SensitivityTrajectory, sample_times: &[f64]) -> Result<LsercMatrix> {
    if sample_times.is_empty() {
        return Err(Error::InvalidArgument("at least one sample time is required".into()));
    }
    let idx = sample_indices(sens, sample_times)?;
    let n_x = sens.directions.n_x();
    let n_y = sens.y_sens[0].nrows();
    let mut entries = DMatrix::zeros(idx.len() * n_y, n_x);
    for (b, &i) in idx.iter().enumerate() {
        entries
            .view_mut((b * n_y, 0), (n_y, n_x))
            .copy_from(&sens.output_l_sensitivity(i));
    }
    let (sigma, _) = full_svd(&entries)?;
    let keep = entries.nrows().min(n_x);
    let direction = match sens.directions.kind() {
        RightInverseKind::DropFirstColumn => {
            Some(sens.directions.entries().column(0).iter().cloned().collect())
        }
        RightInverseKind::SquareInverse => None,
    };
    Ok(LsercMatrix {
        direction,
        sample_times: sample_times.to_vec(),
        entries,
        singular_values: sigma[..keep].to_vec(),
    })
}

/// Numerical rank and right singular vectors `V` (`n_x x n_x`).
pub fn serc_rank(m: &LsercMatrix, eps_rank: f64) -> Result<(usize, DMatrix<f64>)> {
    if !(eps_rank > 0.0) {
        return Err(Error::InvalidArgument("eps_rank must be positive".into()));
    }
    let (sigma, v) = full_svd(&m.entries)?;
    let threshold = eps_rank * sigma.first().copied().unwrap_or(0.0).max(1.0);
    let rank = sigma.iter().filter(|&&s| s > threshold).count();
    Ok((rank, v))
}

/// Pivot columns of `rref(V_r^T)`, `V_r` the trailing `n_x - rank` columns of `V`.
pub fn nonobs_diff_states(v: &DMatrix<f64>, rank: usize, eps_piv: f64) -> Vec<usize> {
    let n = v.ncols();
    if rank >= n {
        return Vec::new();
    }
    let vr_t = v.columns(rank, n - rank).transpose();
    rref(&vr_t, eps_piv).1
}

/// Algebraic states whose L-sensitivity to the states in `j` is nonzero at
/// any sample.
pub fn nonobs_alg_states(
    sens: &SensitivityTrajectory,
    sample_times: &[f64],
    j: &[usize],
    eps_rank: f64,
) -> Result<Vec<usize>> {
    if j.is_empty() {
        return Ok(Vec::new());
    }
    let idx = sample_indices(sens, sample_times)?;
    let n_w = sens.w_sens[0].nrows();
    let mut out = Vec::new();
    let blocks: Vec<DMatrix<f64>> = idx.iter().map(|&i| sens.alg_l_sensitivity(i)).collect();
    for wi in 0..n_w {
        let psi_max = blocks
            .iter()
            .flat_map(|s| j.iter().map(move |&c| s[(wi, c)].abs()))
            .fold(0.0, f64::max);
        if psi_max > eps_rank {
            out.push(wi);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LSercObservable,
    LSercNonObservable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionReport {
    /// Probing direction, `null` for `M = I`.
    pub direction: Option<Vec<f64>>,
    pub right_inverse: RightInverseKind,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub verdict: Verdict,
    /// Differential states flagged by this direction.
    pub non_observable: Vec<String>,
    /// Row-major `Υ`.
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub model: String,
    pub tolerances: ObservabilityOptions,
    pub sample_times: Vec<f64>,
    pub directions: Vec<DirectionReport>,
    pub chi_lno: Vec<String>,
    pub chi_lo: Vec<String>,
    pub alpha_lno: Vec<String>,
    pub alpha_lo: Vec<String>,
    #[serde(skip)]
    pub chi_lno_indices: Vec<usize>,
    #[serde(skip)]
    pub alpha_lno_indices: Vec<usize>,
}

impl ObservabilityReport {
    /// Every probed direction has full column rank.
    pub fn all_observable(&self) -> bool {
        self.directions.iter().all(|d| d.verdict == Verdict::LSercObservable)
    }
}

struct DirectionResult {
    sens: SensitivityTrajectory,
    lserc: LsercMatrix,
    rank: usize,
    pivots: Vec<usize>,
}

fn probe_direction(
    model: &DaeModel,
    t0: f64,
    tf: f64,
    x0: &[f64],
    w0: &[f64],
    probe: &Probe,
    sample_times: &[f64],
    opts: &ObservabilityOptions,
) -> Result<DirectionResult> {
    let m = probe.matrix(model.n_x())?;
    let sens = integrate_sensitivity(model, t0, tf, x0, w0, &m, &opts.integrator)?;
    let lserc = build_lserc(&sens, sample_times)?;
    let (rank, v) = serc_rank(&lserc, opts.eps_rank)?;
    let pivots = nonobs_diff_states(&v, rank, opts.eps_piv);
    Ok(DirectionResult { sens, lserc, rank, pivots })
}

/// Run the L-SERC test from consistent `(x0, w0)` at `sample_times[0]` over
/// each probe, integrating to the last sample time.
pub fn run_lserc(
    model: &DaeModel,
    x0: &[f64],
    w0: &[f64],
    probes: &[Probe],
    sample_times: &[f64],
    opts: &ObservabilityOptions,
) -> Result<ObservabilityReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("at least one direction is required".into()));
    }
    if sample_times.is_empty() || sample_times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidArgument(
            "sample times must be non-empty and non-decreasing".into(),
        ));
    }
    let (t0, tf) = (sample_times[0], *sample_times.last().unwrap());

    let results: Vec<Result<DirectionResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = probes
            .iter()
            .map(|p| s.spawn(move || probe_direction(model, t0, tf, x0, w0, p, sample_times, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("direction worker panicked"))
            .collect()
    });
    let mut done = Vec::with_capacity(results.len());
    for (r, p) in results.into_iter().zip(probes) {
        done.push(r.map_err(|e| Error::Direction {
            direction: p.label(),
            source: Box::new(e),
        })?);
    }

    let n_x = model.n_x();
    let chi: BTreeSet<usize> = done.iter().flat_map(|d| d.pivots.iter().copied()).collect();
    let chi: Vec<usize> = chi.into_iter().collect();
    let mut alpha = BTreeSet::new();
    for d in &done {
        alpha.extend(nonobs_alg_states(&d.sens, sample_times, &chi, opts.eps_rank)?);
    }
    let alpha: Vec<usize> = alpha.into_iter().collect();

    let names = |all: &[String], idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
    let complement = |n: usize, idx: &[usize]| (0..n).filter(|i| !idx.contains(i)).collect::<Vec<_>>();

    let directions = done
        .iter()
        .map(|d| DirectionReport {
            direction: d.lserc.direction.clone(),
            right_inverse: d.sens.directions.kind(),
            singular_values: d.lserc.singular_values.clone(),
            rank: d.rank,
            verdict: if d.rank == n_x {
                Verdict::LSercObservable
            } else {
                Verdict::LSercNonObservable
            },
            non_observable: names(model.diff_states(), &d.pivots),
            matrix: d
                .lserc
                .entries
                .row_iter()
                .map(|r| r.iter().cloned().collect())
                .collect(),
        })
        .collect();

    Ok(ObservabilityReport {
        model: model.name().to_string(),
        tolerances: *opts,
        sample_times: sample_times.to_vec(),
        directions,
        chi_lno: names(model.diff_states(), &chi),
        chi_lo: names(model.diff_states(), &complement(n_x, &chi)),
        alpha_lno: names(model.alg_states(), &alpha),
        alpha_lo: names(model.alg_states(), &complement(model.n_w(), &alpha)),
        chi_lno_indices: chi,
        alpha_lno_indices: alpha,
    })
}

/// First grid time at which `‖S_y^L‖_∞ > threshold`, located by bisection on
/// the monotone predicate "some sample up to here is nonzero".
pub fn sensitivity_onset(sens: &SensitivityTrajectory, threshold: f64) -> Option<f64> {
    let n = sens.base.len();
    let nonzero = |i: usize| sens.output_l_sensitivity(i).amax() > threshold;
    let mut seen = Vec::with_capacity(n);
    let mut any = false;
    for i in 0..n {
        any = any || nonzero(i);
        seen.push(any);
    }
    let first = seen.partition_point(|&s| !s);
    (first < n).then(|| sens.base.times[first])
}

/// Switching time of the output sensitivity for one probe: the earliest `t`
/// in `[t0, t_max]` with `‖S_y^L(t)‖_∞ > threshold`, bracketed on the grid
/// and refined by bisection on the integration end time to within `tol`.
pub fn locate_onset(
    model: &DaeModel,
    t0: f64,
    t_max: f64,
    x0: &[f64],
    w0: &[f64],
    probe: &Probe,
    threshold: f64,
    tol: f64,
    opts: &IntegratorOptions,
) -> Result<Option<f64>> {
    let m = probe.matrix(model.n_x())?;
    let sens = integrate_sensitivity(model, t0, t_max, x0, w0, &m, opts)?;
    let Some(hit) = sensitivity_onset(&sens, threshold) else {
        return Ok(None);
    };
    let i = sens.base.times.partition_point(|&t| t < hit);
    if i == 0 {
        return Ok(Some(t0));
    }
    let (mut lo, mut hi) = (sens.base.times[i - 1], hit);
    let nonzero_at = |t: f64| -> Result<bool> {
        let s = integrate_sensitivity(model, t0, t, x0, w0, &m, opts)?;
        Ok(s.output_l_sensitivity(s.base.len() - 1).amax() > threshold)
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if nonzero_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_expr, ModelDef};
    use std::collections::BTreeMap;

    fn lserc(rows: usize, cols: usize, data: &[f64]) -> LsercMatrix {
        let entries = DMatrix::from_row_slice(rows, cols, data);
        LsercMatrix {
            direction: None,
            sample_times: vec![0.0; rows],
            entries,
            singular_values: vec![],
        }
    }

    #[test]
    fn rank_of_zero_and_rank_one() {
        let (r, _) = serc_rank(&lserc(2, 2, &[0.0; 4]), 1e-6).unwrap();
        assert_eq!(r, 0);
        let (r, v) = serc_rank(&lserc(2, 2, &[1.0, 0.0, 2.0, 0.0]), 1e-6).unwrap();
        assert_eq!(r, 1);
        assert!((v[(1, 1)].abs() - 1.0).abs() < 1e-12);
        assert_eq!(nonobs_diff_states(&v, r, 1e-8), vec![1]);
    }

    #[test]
    fn wide_matrix_has_full_v() {
        // one sample, one output, three states
        let (r, v) = serc_rank(&lserc(1, 3, &[0.0, 3.0, 0.0]), 1e-6).unwrap();
        assert_eq!(r, 1);
        assert_eq!(v.shape(), (3, 3));
        assert_eq!(nonobs_diff_states(&v, r, 1e-8), vec![0, 2]);
    }

    #[test]
    fn pivots_of_echelon_basis() {
        // V with trailing columns e2, e3
        let v = DMatrix::identity(3, 3);
        assert_eq!(nonobs_diff_states(&v, 1, 1e-8), vec![1, 2]);
        assert!(nonobs_diff_states(&v, 3, 1e-8).is_empty());
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(serc_rank(&lserc(1, 2, &[f64::NAN, 1.0]), 1e-6).is_err());
    }

    #[test]
    fn uniform_sampling() {
        assert_eq!(uniform_samples(0.0, 1.0, 11).len(), 11);
        assert_eq!(uniform_samples(0.0, 1.0, 11)[10], 1.0);
        assert_eq!(uniform_samples(0.2, 0.4, 1), vec![0.2]);
        assert_eq!(axis_probes(2).len(), 4);
    }

    fn two_state(g: &str, h: &str) -> DaeModel {
        DaeModel::new(ModelDef {
            name: "toy".into(),
            diff_states: vec!["x1".into(), "x2".into()],
            alg_states: vec!["w".into()],
            outputs: vec!["y".into()],
            params: BTreeMap::new(),
            inputs_u: BTreeMap::new(),
            inputs_v: BTreeMap::new(),
            f: vec![parse_expr("-x1").unwrap(), parse_expr("-0.5 * x2").unwrap()],
            g: vec![parse_expr(g).unwrap()],
            h: vec![parse_expr(h).unwrap()],
            x0: vec![1.0, 2.0],
            w0_guess: None,
        })
        .unwrap()
    }

    #[test]
    fn unreachable_state_and_dependent_algebraic_state() {
        // y sees only x1; w = x2 is driven by the hidden state
        let m = two_state("w - x2", "x1");
        let t = uniform_samples(0.0, 0.5, 6);
        let opts = ObservabilityOptions::default();
        let rep = run_lserc(&m, &[1.0, 2.0], &[2.0], &axis_probes(2), &t, &opts).unwrap();
        assert_eq!(rep.chi_lno, vec!["x2"]);
        assert_eq!(rep.chi_lo, vec!["x1"]);
        assert_eq!(rep.alpha_lno, vec!["w"]);
        assert!(rep.alpha_lo.is_empty());
        assert!(rep.directions.iter().all(|d| d.rank == 1));
    }

    #[test]
    fn algebraic_state_tied_to_observed_state() {
        let m = two_state("w - x1", "x1");
        let t = uniform_samples(0.0, 0.5, 6);
        let rep = run_lserc(&m, &[1.0, 2.0], &[1.0], &axis_probes(2), &t, &Default::default()).unwrap();
        assert_eq!(rep.chi_lno, vec!["x2"]);
        // W = e^{-t} e_1^T has no x2 column
        assert!(rep.alpha_lno.is_empty());
    }

    #[test]
    fn observable_toy() {
        let m = two_state("w - x2", "x1 + w");
        let t = uniform_samples(0.0, 0.5, 6);
        let rep = run_lserc(&m, &[1.0, 2.0], &[2.0], &[Probe::Identity], &t, &Default::default()).unwrap();
        assert!(rep.all_observable());
        assert!(rep.chi_lno.is_empty() && rep.alpha_lno.is_empty());
    }

    #[test]
    fn samples_outside_window_rejected() {
        let m = two_state("w - x2", "x1");
        let sens = integrate_sensitivity(
            &m,
            0.0,
            0.1,
            &[1.0, 2.0],
            &[2.0],
            &DirectionsMatrix::identity(2),
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!(build_lserc(&sens, &[0.2]).is_err());
        let one = build_lserc(&sens, &[0.0]).unwrap();
        assert_eq!(one.entries.shape(), (1, 2));
        assert_eq!(one.entries[(0, 0)], 1.0);
    }
}
