//! TOML model documents.
//!
//! ```toml
//! name = "decay"
//! diff_states = ["x"]
//! alg_states = ["w"]
//! outputs = ["y"]
//! f = ["-k * x"]
//! g = ["w - x"]
//! h = ["w"]
//! x0 = [1.0]
//! w0_guess = [1.0]
//!
//! [params]
//! k = 1.0
//!
//! [inputs_u]
//! [inputs_v]
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::{parse_expr, DaeModel, Expr, ModelDef};
use crate::error::{Error, ParseError, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    name: String,
    diff_states: Vec<String>,
    #[serde(default)]
    alg_states: Vec<String>,
    outputs: Vec<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    inputs_u: BTreeMap<String, Spanned<String>>,
    #[serde(default)]
    inputs_v: BTreeMap<String, Spanned<String>>,
    f: Vec<Spanned<String>>,
    #[serde(default)]
    g: Vec<Spanned<String>>,
    h: Vec<Spanned<String>>,
    x0: Vec<f64>,
    w0_guess: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct OutDocument<'a> {
    name: &'a str,
    diff_states: &'a [String],
    alg_states: &'a [String],
    outputs: &'a [String],
    f: Vec<String>,
    g: Vec<String>,
    h: Vec<String>,
    x0: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    w0_guess: Option<&'a [f64]>,
    params: &'a BTreeMap<String, f64>,
    inputs_u: BTreeMap<&'a str, String>,
    inputs_v: BTreeMap<&'a str, String>,
}

/// 1-based (line, column) of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

fn parse_spanned(text: &str, s: &Spanned<String>) -> Result<Expr, ParseError> {
    parse_expr(s.get_ref()).map_err(|e| {
        // The span covers the quoted literal; expression columns start one past
        // the opening quote. Escapes inside the literal are not accounted for.
        let start = s.span().start;
        let (line, col) = line_col(text, start);
        if e.line == 1 {
            ParseError::new(line, col + e.column, e.message)
        } else {
            ParseError::new(line + e.line - 1, e.column, e.message)
        }
    })
}

fn toml_error(text: &str, e: toml::de::Error) -> ParseError {
    let (line, col) = e.span().map_or((1, 1), |s| line_col(text, s.start));
    ParseError::new(line, col, e.message().trim().to_string())
}

/// Parse and validate a TOML model document.
pub fn parse_model(text: &str) -> Result<DaeModel> {
    let raw: RawDocument = toml::from_str(text).map_err(|e| Error::Parse(toml_error(text, e)))?;
    let exprs = |v: &[Spanned<String>]| -> Result<Vec<Expr>> {
        v.iter().map(|s| parse_spanned(text, s).map_err(Error::from)).collect()
    };
    let inputs = |m: &BTreeMap<String, Spanned<String>>| -> Result<BTreeMap<String, Expr>> {
        m.iter()
            .map(|(k, s)| Ok((k.clone(), parse_spanned(text, s)?)))
            .collect()
    };
    let def = ModelDef {
        name: raw.name,
        diff_states: raw.diff_states,
        alg_states: raw.alg_states,
        outputs: raw.outputs,
        params: raw.params,
        inputs_u: inputs(&raw.inputs_u)?,
        inputs_v: inputs(&raw.inputs_v)?,
        f: exprs(&raw.f)?,
        g: exprs(&raw.g)?,
        h: exprs(&raw.h)?,
        x0: raw.x0,
        w0_guess: raw.w0_guess,
    };
    DaeModel::new(def)
}

/// Write a model back out as a TOML document.
pub fn serialize_model(model: &DaeModel) -> String {
    let def = model.def();
    let show = |v: &[Expr]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>();
    let doc = OutDocument {
        name: &def.name,
        diff_states: &def.diff_states,
        alg_states: &def.alg_states,
        outputs: &def.outputs,
        f: show(&def.f),
        g: show(&def.g),
        h: show(&def.h),
        x0: &def.x0,
        w0_guess: def.w0_guess.as_deref(),
        params: &def.params,
        inputs_u: def.inputs_u.iter().map(|(k, e)| (k.as_str(), e.to_string())).collect(),
        inputs_v: def.inputs_v.iter().map(|(k, e)| (k.as_str(), e.to_string())).collect(),
    };
    toml::to_string(&doc).expect("model documents always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_wind_turbine, OutputKind};

    const DECAY: &str = r#"name = "decay"
diff_states = ["x"]
alg_states = ["w"]
outputs = ["y"]
f = ["-k * x"]
g = ["w - x"]
h = ["w"]
x0 = [1.0]

[params]
k = 1.0
"#;

    #[test]
    fn parses_minimal_document() {
        let m = parse_model(DECAY).unwrap();
        assert_eq!(m.n_x(), 1);
        assert_eq!(m.f(0.0, &[2.0], &[2.0]).unwrap(), vec![-2.0]);
        assert_eq!(m.w0_guess(), vec![1.0]);
    }

    #[test]
    fn expression_errors_point_into_the_document() {
        let text = DECAY.replace("g = [\"w - x\"]", "g = [\"w - * x\"]");
        match parse_model(&text).unwrap_err() {
            Error::Parse(e) => {
                assert_eq!(e.line, 6);
                // g = ["w - * x"]: '*' is the 11th character of the line
                assert_eq!(e.column, 11, "{e}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn toml_errors_have_positions() {
        let text = DECAY.replace("x0 = [1.0]", "x0 = [1.0");
        let err = parse_model(&text).unwrap_err();
        assert!(matches!(err, Error::Parse(ParseError { line, .. }) if line >= 8), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let text = DECAY.replace("f = [\"-k * x\"]", "f = [\"-k * x\", \"0\"]");
        assert!(matches!(parse_model(&text), Err(Error::Model(_))));
    }

    #[test]
    fn builtin_round_trips() {
        for kind in [OutputKind::Smooth, OutputKind::MinThreshold] {
            let m = builtin_wind_turbine(kind);
            let text = serialize_model(&m);
            let again = parse_model(&text).unwrap();
            assert_eq!(again.def(), m.def(), "{text}");
        }
    }
}
