//! Built-in wind turbine model: constant-wind-speed machine with integral
//! reactive power and voltage control, terminal voltage as algebraic state.

use std::collections::BTreeMap;

use super::{parse_expr, DaeModel, ModelDef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    /// `y = E_q * V`
    Smooth,
    /// `y = min(V, 0.98)`, a sensor saturating at 0.98 p.u.
    MinThreshold,
}

/// Injected reactive power `Q = V (E_q - V) / X_eq`, substituted inline.
const Q: &str = "(V * (E_q - V) / X_eq)";

pub fn builtin_wind_turbine(output: OutputKind) -> DaeModel {
    let params = BTreeMap::from(
        [
            ("K_Qi", 0.1),
            ("K_Vi", 40.0),
            ("R", 0.02),
            ("X", 0.02987),
            ("E", 1.0164),
            ("X_eq", 0.8),
            ("Q_cmd", 0.6484),
            ("P", 1.0),
        ]
        .map(|(k, v)| (k.to_string(), v)),
    );
    let f = [
        format!("K_Qi * (Q_cmd - {Q})"),
        "K_Vi * (V_ref - V)".to_string(),
    ];
    let g = format!("V^4 - (2 * (P * R + {Q} * X) + E^2) * V^2 + (R^2 + X^2) * (P^2 + {Q}^2)");
    let (name, h) = match output {
        OutputKind::Smooth => ("wind_turbine_smooth", "E_q * V"),
        OutputKind::MinThreshold => ("wind_turbine_min", "min(V, 0.98)"),
    };
    let parse = |s: &str| parse_expr(s).expect("builtin expression parses");
    let def = ModelDef {
        name: name.to_string(),
        diff_states: vec!["V_ref".into(), "E_q".into()],
        alg_states: vec!["V".into()],
        outputs: vec!["y".into()],
        params,
        inputs_u: BTreeMap::new(),
        inputs_v: BTreeMap::new(),
        f: f.iter().map(|s| parse(s)).collect(),
        g: vec![parse(&g)],
        h: vec![parse(h)],
        x0: vec![0.5, 0.75],
        w0_guess: Some(vec![1.021]),
    };
    DaeModel::new(def).expect("builtin model is valid")
}
