use std::collections::BTreeMap;

use daeobs::linalg::min_eigenvalue;
use daeobs::model::{consistent_init, parse_expr, ModelDef, NewtonOptions};
use daeobs::observability::uniform_samples;
use daeobs::sekf::{measurement_update, run_sekf, synthesize_truth, MeasurementSeries, NoiseSpec, SekfConfig};
use daeobs::{builtin_wind_turbine, integrate_sensitivity, DaeModel, DirectionsMatrix, Error, OutputKind};
use nalgebra::DMatrix;

fn model(f: &[&str], g: &[&str], h: &[&str], x0: &[f64]) -> DaeModel {
    let xs = ["x1", "x2", "x3"];
    DaeModel::new(ModelDef {
        name: "m".into(),
        diff_states: xs[..f.len()].iter().map(|s| s.to_string()).collect(),
        alg_states: (0..g.len()).map(|i| format!("w{}", i + 1)).collect(),
        outputs: (0..h.len()).map(|i| format!("y{}", i + 1)).collect(),
        params: BTreeMap::new(),
        inputs_u: BTreeMap::new(),
        inputs_v: BTreeMap::new(),
        f: f.iter().map(|s| parse_expr(s).unwrap()).collect(),
        g: g.iter().map(|s| parse_expr(s).unwrap()).collect(),
        h: h.iter().map(|s| parse_expr(s).unwrap()).collect(),
        x0: x0.to_vec(),
        w0_guess: None,
    })
    .unwrap()
}

#[test]
fn driftless_diffusion_variance() {
    let m = model(&["0"], &[], &["x1"], &[0.0]);
    let q = 1e-4;
    let paths = 1000;
    let mut finals = Vec::with_capacity(paths);
    for seed in 0..paths as u64 {
        let noise = NoiseSpec::diagonal(&m, q, 0.0, seed);
        let (tr, _) = synthesize_truth(&m, &noise, 0.0, 1.0, 1e-2, &[0.0], &[], &[], &NewtonOptions::default()).unwrap();
        finals.push(tr.last_x()[0]);
    }
    let n = paths as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = q * (2.0 / (n - 1.0)).sqrt();
    assert!((var - q).abs() <= 3.0 * se, "variance {var} vs {q} (se {se})");
}

#[test]
fn seeded_synthesis_is_reproducible() {
    let m = builtin_wind_turbine(OutputKind::Smooth);
    let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
    let noise = NoiseSpec::diagonal(&m, 1e-4, 1e-4, 99);
    let t = uniform_samples(0.1, 1.0, 10);
    let a = synthesize_truth(&m, &noise, 0.0, 1.0, 1e-3, m.x0(), &w0, &t, &NewtonOptions::default()).unwrap();
    let b = synthesize_truth(&m, &noise, 0.0, 1.0, 1e-3, m.x0(), &w0, &t, &NewtonOptions::default()).unwrap();
    assert_eq!(a, b);
    let other = NoiseSpec { seed: 100, ..noise };
    let c = synthesize_truth(&m, &other, 0.0, 1.0, 1e-3, m.x0(), &w0, &t, &NewtonOptions::default()).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn zero_noise_wind_truth_tracks_rk4() {
    let m = builtin_wind_turbine(OutputKind::Smooth);
    let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
    let noise = NoiseSpec::diagonal(&m, 0.0, 0.0, 1);
    let t = uniform_samples(0.02, 1.0, 50);
    let (tr, meas) = synthesize_truth(&m, &noise, 0.0, 1.0, 1e-3, m.x0(), &w0, &t, &NewtonOptions::default()).unwrap();
    let rk = daeobs::integrate_dae(&m, 0.0, 1.0, m.x0(), &w0, &Default::default()).unwrap();
    for i in 0..tr.len() {
        for j in 0..2 {
            assert!((tr.x[i][j] - rk.x[i][j]).abs() <= 1e-2);
        }
    }
    for (tk, y) in meas.times.iter().zip(&meas.values) {
        let i = tr.index_near(*tk, 1e-9).unwrap();
        assert_eq!(y[0], m.h(*tk, &tr.x[i], &tr.w[i]).unwrap()[0]);
    }
}

#[test]
fn noiseless_self_consistent_run_has_small_innovations() {
    let m = builtin_wind_turbine(OutputKind::Smooth);
    let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
    let t = uniform_samples(0.02, 1.0, 50);
    // measurements from the same noiseless model the filter predicts with
    let rk = daeobs::integrate_dae(&m, 0.0, 1.0, m.x0(), &w0, &Default::default()).unwrap();
    let meas = MeasurementSeries {
        times: t.clone(),
        values: t
            .iter()
            .map(|&tk| {
                let i = rk.index_near(tk, 1e-9).unwrap();
                m.h(tk, &rk.x[i], &rk.w[i]).unwrap()
            })
            .collect(),
    };
    let noise = NoiseSpec::diagonal(&m, 0.0, 1e-4, 0);
    let run = run_sekf(&m, &noise, 0.0, m.x0(), &w0, &SekfConfig::new(DMatrix::identity(2, 2) * 4.0), &meas).unwrap();
    for s in &run.steps {
        assert!(s.innovation[0].abs() <= 1e-6, "t = {}: {:?}", s.t, s.innovation);
    }
}

#[test]
fn covariance_and_consistency_invariants() {
    for kind in [OutputKind::Smooth, OutputKind::MinThreshold] {
        let m = builtin_wind_turbine(kind);
        let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
        let noise = NoiseSpec::diagonal(&m, 1e-4, 1e-4, 5);
        let t = uniform_samples(0.02, 1.0, 50);
        let (_, meas) = synthesize_truth(&m, &noise, 0.0, 1.0, 1e-3, m.x0(), &w0, &t, &NewtonOptions::default()).unwrap();
        let run = run_sekf(&m, &noise, 0.0, m.x0(), &w0, &SekfConfig::new(DMatrix::identity(2, 2) * 4.0), &meas).unwrap();
        for s in &run.steps {
            assert_eq!(s.p, s.p.transpose());
            assert!(min_eigenvalue(&s.p) >= -1e-10, "t = {}: {}", s.t, min_eigenvalue(&s.p));
            assert!(s.g_residual <= 1e-10);
            for &i in &s.nonobs_diff {
                assert!(s.gain.row(i).iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn update_never_increases_trace() {
    let m = builtin_wind_turbine(OutputKind::Smooth);
    let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
    let noise = NoiseSpec::diagonal(&m, 1e-4, 1e-4, 0);
    let s = integrate_sensitivity(&m, 0.0, 0.05, m.x0(), &w0, &DirectionsMatrix::identity(2), &Default::default()).unwrap();
    for p in [DMatrix::identity(2, 2) * 4.0, DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.2])] {
        let up = measurement_update(&m, &s, &p, &noise, &[1.0], &[], &NewtonOptions::default()).unwrap();
        assert!(up.c.amax() > 0.0);
        assert!(up.p.trace() <= up.p_prior.trace() + 1e-12);
    }
}

#[test]
fn failing_step_returns_partial_run() {
    // x reaches zero at t = 0.05 and sqrt(x) stops being defined
    let m = model(&["-1"], &["w1 - sqrt(x1)"], &["x1"], &[0.05]);
    let w0 = [0.05f64.sqrt()];
    let meas = MeasurementSeries {
        times: vec![0.02, 0.04, 0.06],
        values: vec![vec![0.03], vec![0.01], vec![-0.01]],
    };
    let noise = NoiseSpec::diagonal(&m, 0.0, 1e6, 0);
    match run_sekf(&m, &noise, 0.0, &[0.05], &w0, &SekfConfig::new(DMatrix::identity(1, 1)), &meas) {
        Err(Error::FilterStep { step, partial, .. }) => {
            assert_eq!(step, 3);
            assert_eq!(partial.steps.len(), 2);
        }
        other => panic!("expected a filter step error, got {other:?}"),
    }
}
