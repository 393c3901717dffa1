use std::collections::BTreeMap;

use daeobs::model::{consistent_init, parse_expr, ModelDef, NewtonOptions};
use daeobs::observability::{
    axis_probes, nonobs_diff_states, run_lserc, serc_rank, uniform_samples, LsercMatrix, ObservabilityOptions, Probe,
};
use daeobs::{builtin_wind_turbine, DaeModel, OutputKind};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn lserc(entries: DMatrix<f64>) -> LsercMatrix {
    LsercMatrix {
        direction: None,
        sample_times: vec![],
        entries,
        singular_values: vec![],
    }
}

/// `rows x 3` matrices of rank `r` built as a product of well-scaled factors.
fn low_rank() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=3, 3usize..=6).prop_flat_map(|(r, rows)| {
        (
            prop::collection::vec(1.0..2.0f64, rows * r),
            prop::collection::vec(prop_oneof![-2.0..-1.0f64, 1.0..2.0f64], r * 3),
            Just((r, rows)),
        )
            .prop_map(|(a, b, (r, rows))| {
                let a = DMatrix::from_row_slice(rows, r, &a);
                let mut b = DMatrix::from_row_slice(r, 3, &b);
                // make the rows of b well separated
                for i in 0..r {
                    b[(i, i)] += 5.0 * (i as f64 + 1.0);
                }
                a * b
            })
    })
}

proptest! {
    #[test]
    fn rank_ignores_row_block_order(m in low_rank(), seed in 0u64..1000) {
        let (r0, _) = serc_rank(&lserc(m.clone()), 1e-6).unwrap();
        let mut order: Vec<usize> = (0..m.nrows()).collect();
        let n = order.len();
        for i in 0..n {
            order.swap(i, (seed as usize * 7 + i * 3) % n);
        }
        let permuted = DMatrix::from_fn(n, 3, |i, j| m[(order[i], j)]);
        let (r1, _) = serc_rank(&lserc(permuted), 1e-6).unwrap();
        prop_assert_eq!(r0, r1);
    }

    #[test]
    fn rank_and_pivots_ignore_scaling(m in low_rank(), c in prop_oneof![1.0..1e3f64, -1e3..-1.0f64]) {
        let (r0, v0) = serc_rank(&lserc(m.clone()), 1e-6).unwrap();
        let (r1, v1) = serc_rank(&lserc(m * c), 1e-6).unwrap();
        prop_assert_eq!(r0, r1);
        prop_assert_eq!(nonobs_diff_states(&v0, r0, 1e-8), nonobs_diff_states(&v1, r1, 1e-8));
    }
}

fn chain(h: &str) -> DaeModel {
    DaeModel::new(ModelDef {
        name: "chain".into(),
        diff_states: vec!["a".into(), "b".into(), "c".into()],
        alg_states: vec!["w".into()],
        outputs: vec!["y".into()],
        params: BTreeMap::new(),
        inputs_u: BTreeMap::new(),
        inputs_v: BTreeMap::new(),
        // c evolves on its own and never reaches y
        f: vec![parse_expr("-a + b").unwrap(), parse_expr("-2 * b").unwrap(), parse_expr("-c + 0.1 * c^2").unwrap()],
        g: vec![parse_expr("w - max(a, 0.5 * a) - 0.2 * c").unwrap()],
        h: vec![parse_expr(h).unwrap()],
        x0: vec![1.0, 0.5, 2.0],
        w0_guess: None,
    })
    .unwrap()
}

#[test]
fn state_without_path_to_output_is_never_observable() {
    let m = chain("a");
    let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
    let t = uniform_samples(0.0, 1.0, 11);
    let rep = run_lserc(&m, m.x0(), &w0, &axis_probes(3), &t, &ObservabilityOptions::default()).unwrap();
    for d in &rep.directions {
        assert!(d.non_observable.contains(&"c".to_string()), "{d:?}");
    }
    assert_eq!(rep.chi_lno, vec!["c"]);
    assert_eq!(rep.chi_lo, vec!["a", "b"]);
    // w depends on c directly
    assert_eq!(rep.alpha_lno, vec!["w"]);
}

#[test]
fn partitions_cover_all_states() {
    for h in ["a", "w", "b * a", "0 * a"] {
        let m = chain(h);
        let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
        let rep = run_lserc(&m, m.x0(), &w0, &axis_probes(3), &uniform_samples(0.0, 1.0, 6), &Default::default()).unwrap();
        let mut diff: Vec<_> = rep.chi_lno.iter().chain(&rep.chi_lo).cloned().collect();
        diff.sort();
        assert_eq!(diff, vec!["a", "b", "c"]);
        assert!(rep.chi_lno.iter().all(|s| !rep.chi_lo.contains(s)));
        let mut alg: Vec<_> = rep.alpha_lno.iter().chain(&rep.alpha_lo).cloned().collect();
        alg.sort();
        assert_eq!(alg, vec!["w"]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn probing_and_identity_agree_on_smooth_model(d0 in -2.0..2.0f64, d1 in -2.0..2.0f64, n in 2usize..12) {
        let m = builtin_wind_turbine(OutputKind::Smooth);
        let w0 = consistent_init(&m, 0.0, m.x0(), &m.w0_guess(), &NewtonOptions::default()).unwrap();
        let t = uniform_samples(0.0, 1.0, n);
        let opts = ObservabilityOptions::default();
        let a = run_lserc(&m, m.x0(), &w0, &[Probe::Direction(vec![d0, d1])], &t, &opts).unwrap();
        let b = run_lserc(&m, m.x0(), &w0, &[Probe::Identity], &t, &opts).unwrap();
        prop_assert_eq!(a.directions[0].rank, b.directions[0].rank);
        prop_assert_eq!(&a.chi_lno, &b.chi_lno);
        prop_assert_eq!(&a.alpha_lno, &b.alpha_lno);
        for (x, y) in a.directions[0].matrix.iter().flatten().zip(b.directions[0].matrix.iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}
