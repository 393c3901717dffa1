use std::collections::BTreeMap;

use daeobs::model::{parse_expr, serialize_model, BinOp, Expr, Func, ModelDef};
use daeobs::{builtin_wind_turbine, integrate_dae, parse_model, DaeModel, IntegratorOptions, OutputKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0..100.0f64).prop_map(Expr::num),
        prop::sample::select(vec!["x", "w", "k", "t"]).prop_map(Expr::ident),
    ];
    leaf.prop_recursive(5, 48, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (
                prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::binary(op, a, b)),
            (prop::sample::select(Func::ALL.to_vec()), inner.clone(), inner)
                .prop_map(|(f, a, b)| {
                    let args = if f.arity() == 2 { vec![a, b] } else { vec![a] };
                    Expr::call(f, args)
                }),
        ]
    })
}

proptest! {
    #[test]
    fn expression_display_reparses(e in expr_strategy()) {
        let text = e.to_string();
        let back = parse_expr(&text).unwrap();
        prop_assert_eq!(back, e, "{}", text);
    }

    #[test]
    fn documents_round_trip(e in expr_strategy(), k in -5.0..5.0f64) {
        let def = ModelDef {
            name: "rt".into(),
            diff_states: vec!["x".into()],
            alg_states: vec!["w".into()],
            outputs: vec!["y".into()],
            params: BTreeMap::from([("k".to_string(), k)]),
            inputs_u: BTreeMap::new(),
            inputs_v: BTreeMap::new(),
            f: vec![e.clone()],
            g: vec![parse_expr("w - x").unwrap()],
            h: vec![e],
            x0: vec![0.5],
            w0_guess: Some(vec![0.5]),
        };
        let m = DaeModel::new(def).unwrap();
        let back = parse_model(&serialize_model(&m)).unwrap();
        prop_assert_eq!(back.def(), m.def());
    }
}

fn shipped(name: &str) -> DaeModel {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/").to_string() + name;
    parse_model(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_documents_match_builtins() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (file, kind) in [("wind_smooth.toml", OutputKind::Smooth), ("wind_min.toml", OutputKind::MinThreshold)] {
        let doc = shipped(file);
        let bi = builtin_wind_turbine(kind);
        assert_eq!(doc.def(), bi.def());
        for _ in 0..100 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(-1.0..1.5)];
            let w = [rng.random_range(0.8..1.2)];
            assert_eq!(doc.f(0.0, &x, &w).unwrap(), bi.f(0.0, &x, &w).unwrap());
            assert_eq!(doc.g(0.0, &x, &w).unwrap(), bi.g(0.0, &x, &w).unwrap());
            assert_eq!(doc.h(0.0, &x, &w).unwrap(), bi.h(0.0, &x, &w).unwrap());
        }
    }
}

#[test]
fn parameter_augmentation_preserves_trajectories() {
    let m = builtin_wind_turbine(OutputKind::Smooth);
    let aug = m.augment_parameters(&["K_Vi", "X"]).unwrap();
    assert_eq!(aug.n_x(), 4);
    assert_eq!(aug.x0()[2..], [40.0, 0.02987]);
    let opts = IntegratorOptions::default();
    let w0 = [1.025005732202822];
    let w0 = daeobs::model::consistent_init(&m, 0.0, m.x0(), &w0, &opts.newton).unwrap();
    let a = integrate_dae(&m, 0.0, 0.5, m.x0(), &w0, &opts).unwrap();
    let b = integrate_dae(&aug, 0.0, 0.5, aug.x0(), &w0, &opts).unwrap();
    for i in 0..a.len() {
        for j in 0..2 {
            assert!((a.x[i][j] - b.x[i][j]).abs() <= 1e-12);
        }
        assert!((a.w[i][0] - b.w[i][0]).abs() <= 1e-12);
        assert_eq!(b.x[i][2..], [40.0, 0.02987]);
    }
    assert!(m.augment_parameters(&["nope"]).is_err());
}

#[test]
fn invalid_documents_report_positions() {
    let text = "name = \"bad\"\ndiff_states = [\"x\"]\noutputs = [\"y\"]\nf = [\"-x\"]\nh = [\"x +* 2\"]\nx0 = [1.0]\n";
    let err = parse_model(text).unwrap_err();
    assert!(err.is_parse());
    let msg = err.to_string();
    assert!(msg.contains("5:"), "{msg}");
}
