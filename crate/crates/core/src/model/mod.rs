//! Semi-explicit index-1 DAE models.
//!
//! A model is `x' = f(x, w, u)`, `0 = g(x, w, v)`, `y = h(x, w, u, v)` with the
//! right-hand sides given as [`Expr`] trees. On construction the trees are
//! resolved against the declared names into slot-indexed form, so evaluation
//! is a plain tree walk generic over [`Scalar`]: the same code path yields
//! values (over `f64`) and LD-derivatives (over [`LdScalar`]).

mod builtin;
mod document;
pub mod expr;
mod newton;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lexcalc::{LdScalar, Scalar};

pub use builtin::{builtin_wind_turbine, OutputKind};
pub use document::{parse_model, serialize_model};
pub use expr::{parse_expr, BinOp, Expr, Func};
pub use newton::{consistent_init, solve_algebraic, NewtonOptions};
pub(crate) use newton::condition_estimate;

/// Which right-hand-side block an expression belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    F,
    G,
    H,
    InputU,
    InputV,
}

impl Block {
    fn label(self) -> &'static str {
        match self {
            Block::F => "f",
            Block::G => "g",
            Block::H => "h",
            Block::InputU => "inputs_u",
            Block::InputV => "inputs_v",
        }
    }
}

/// Position of an expression inside a model, used in diagnostics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExprLocation {
    pub block: Block,
    pub index: usize,
}

impl fmt::Display for ExprLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.block.label(), self.index)
    }
}

/// Plain description of a model, as read from or written to a document.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDef {
    pub name: String,
    pub diff_states: Vec<String>,
    pub alg_states: Vec<String>,
    pub outputs: Vec<String>,
    pub params: BTreeMap<String, f64>,
    pub inputs_u: BTreeMap<String, Expr>,
    pub inputs_v: BTreeMap<String, Expr>,
    pub f: Vec<Expr>,
    pub g: Vec<Expr>,
    pub h: Vec<Expr>,
    pub x0: Vec<f64>,
    pub w0_guess: Option<Vec<f64>>,
}

/// How `min`/`max`/`abs` nodes pick their branch during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branching {
    /// Lexicographic selection on (value, dirs).
    Lexicographic,
    /// Bit `i` of the mask fixes nonsmooth node `i` of the block: 0 takes the
    /// first argument (`+a` for abs), 1 the second (`-a` for abs).
    Forced(u64),
}

#[derive(Clone, Debug)]
enum Node {
    Const(f64),
    T,
    X(usize),
    W(usize),
    U(usize),
    V(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Smooth(Func, Box<Node>),
    Nonsmooth { func: Func, id: usize, args: Vec<Node> },
}

#[derive(Clone, Copy)]
enum Scope {
    Dynamics,
    Constraint,
    Output,
    Input,
}

struct Resolver<'a> {
    def: &'a ModelDef,
    u_names: Vec<&'a String>,
    v_names: Vec<&'a String>,
}

impl Resolver<'_> {
    fn compile(&self, e: &Expr, scope: Scope, loc: &ExprLocation, next_id: &mut usize) -> Result<Node> {
        Ok(match e {
            Expr::Num(v) => Node::Const(*v),
            Expr::Ident(name) => self.resolve(name, scope, loc)?,
            Expr::Neg(a) => Node::Neg(Box::new(self.compile(a, scope, loc, next_id)?)),
            Expr::Binary(op, a, b) => Node::Bin(
                *op,
                Box::new(self.compile(a, scope, loc, next_id)?),
                Box::new(self.compile(b, scope, loc, next_id)?),
            ),
            Expr::Call(func, args) => {
                if args.len() != func.arity() {
                    return Err(Error::Model(format!(
                        "{loc}: {} expects {} argument(s), got {}",
                        func.name(),
                        func.arity(),
                        args.len()
                    )));
                }
                if func.is_nonsmooth() {
                    let id = *next_id;
                    *next_id += 1;
                    let args = args
                        .iter()
                        .map(|a| self.compile(a, scope, loc, next_id))
                        .collect::<Result<Vec<_>>>()?;
                    Node::Nonsmooth { func: *func, id, args }
                } else {
                    Node::Smooth(*func, Box::new(self.compile(&args[0], scope, loc, next_id)?))
                }
            }
        })
    }

    fn resolve(&self, name: &str, scope: Scope, loc: &ExprLocation) -> Result<Node> {
        if name == "t" {
            return Ok(Node::T);
        }
        if let Some(v) = self.def.params.get(name) {
            return Ok(Node::Const(*v));
        }
        let bad = |what: &str| Err(Error::Model(format!("{loc}: {what} '{name}' not admissible here")));
        if let Some(i) = self.def.diff_states.iter().position(|n| n == name) {
            return match scope {
                Scope::Input => bad("state"),
                _ => Ok(Node::X(i)),
            };
        }
        if let Some(i) = self.def.alg_states.iter().position(|n| n == name) {
            return match scope {
                Scope::Input => bad("state"),
                _ => Ok(Node::W(i)),
            };
        }
        if let Some(i) = self.u_names.iter().position(|n| *n == name) {
            return match scope {
                Scope::Dynamics | Scope::Output => Ok(Node::U(i)),
                _ => bad("input u"),
            };
        }
        if let Some(i) = self.v_names.iter().position(|n| *n == name) {
            return match scope {
                Scope::Constraint | Scope::Output => Ok(Node::V(i)),
                _ => bad("input v"),
            };
        }
        Err(Error::Model(format!("{loc}: unknown identifier '{name}'")))
    }
}

struct Ctx<'a, S> {
    t: f64,
    x: &'a [S],
    w: &'a [S],
    u: &'a [S],
    v: &'a [S],
    k: usize,
    branching: Branching,
    loc: &'a ExprLocation,
}

impl<S: Scalar> Ctx<'_, S> {
    fn domain(&self, message: String) -> Error {
        Error::Domain {
            location: self.loc.clone(),
            message,
        }
    }

    fn finite(&self, r: S, what: &str) -> Result<S> {
        if r.is_finite() {
            Ok(r)
        } else {
            Err(self.domain(format!("{what} produced a non-finite result")))
        }
    }

    fn eval(&self, node: &Node) -> Result<S> {
        Ok(match node {
            Node::Const(c) => S::constant(*c, self.k),
            Node::T => S::constant(self.t, self.k),
            Node::X(i) => self.x[*i].clone(),
            Node::W(i) => self.w[*i].clone(),
            Node::U(i) => self.u[*i].clone(),
            Node::V(i) => self.v[*i].clone(),
            Node::Neg(a) => self.eval(a)?.neg(),
            Node::Bin(op, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                match op {
                    BinOp::Add => a.add(&b),
                    BinOp::Sub => a.sub(&b),
                    BinOp::Mul => a.mul(&b),
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(self.domain("division by zero".into()));
                        }
                        self.finite(a.div(&b), "division")?
                    }
                    BinOp::Pow => {
                        if a.value() < 0.0 && b.value().fract() != 0.0 {
                            return Err(self.domain(format!(
                                "negative base {} with non-integer exponent {}",
                                a.value(),
                                b.value()
                            )));
                        }
                        self.finite(a.pow(&b), "power")?
                    }
                }
            }
            Node::Smooth(func, a) => {
                let a = self.eval(a)?;
                match func {
                    Func::Exp => self.finite(a.exp(), "exp")?,
                    Func::Log => {
                        if a.value() <= 0.0 {
                            return Err(self.domain(format!("log of non-positive value {}", a.value())));
                        }
                        self.finite(a.ln(), "log")?
                    }
                    Func::Sqrt => {
                        if a.value() < 0.0 {
                            return Err(self.domain(format!("sqrt of negative value {}", a.value())));
                        }
                        self.finite(a.sqrt(), "sqrt")?
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    _ => unreachable!("nonsmooth functions are compiled separately"),
                }
            }
            Node::Nonsmooth { func, id, args } => {
                let a = self.eval(&args[0])?;
                let second = match self.branching {
                    Branching::Lexicographic => None,
                    Branching::Forced(mask) => Some(*id < 64 && (mask >> id) & 1 == 1),
                };
                match func {
                    Func::Abs => match second {
                        None => a.abs(),
                        Some(false) => a,
                        Some(true) => a.neg(),
                    },
                    Func::Min | Func::Max => {
                        let b = self.eval(&args[1])?;
                        match second {
                            None if *func == Func::Min => a.min(&b),
                            None => a.max(&b),
                            Some(false) => a,
                            Some(true) => b,
                        }
                    }
                    _ => unreachable!("smooth functions are compiled separately"),
                }
            }
        })
    }
}

/// A validated, evaluable DAE model.
#[derive(Clone, Debug)]
pub struct DaeModel {
    def: ModelDef,
    f: Vec<Node>,
    g: Vec<Node>,
    h: Vec<Node>,
    u: Vec<Node>,
    v: Vec<Node>,
    g_nonsmooth: usize,
}

const RESERVED: &[&str] = &["t"];

impl DaeModel {
    pub fn new(def: ModelDef) -> Result<Self> {
        let nx = def.diff_states.len();
        let nw = def.alg_states.len();
        if nx == 0 {
            return Err(Error::Model("at least one differential state is required".into()));
        }
        if def.h.is_empty() {
            return Err(Error::Model("at least one output is required".into()));
        }
        if def.f.len() != nx {
            return Err(Error::Model(format!("f has {} expressions for {nx} differential states", def.f.len())));
        }
        if def.g.len() != nw {
            return Err(Error::Model(format!("g has {} expressions for {nw} algebraic states", def.g.len())));
        }
        if def.h.len() != def.outputs.len() {
            return Err(Error::Model(format!(
                "h has {} expressions for {} outputs",
                def.h.len(),
                def.outputs.len()
            )));
        }
        if def.x0.len() != nx {
            return Err(Error::Model(format!("x0 has {} entries for {nx} differential states", def.x0.len())));
        }
        if let Some(w0) = &def.w0_guess {
            if w0.len() != nw {
                return Err(Error::Model(format!("w0_guess has {} entries for {nw} algebraic states", w0.len())));
            }
        }
        let mut seen = BTreeSet::new();
        let names = def
            .diff_states
            .iter()
            .chain(&def.alg_states)
            .chain(def.params.keys())
            .chain(def.inputs_u.keys())
            .chain(def.inputs_v.keys());
        for n in names {
            if RESERVED.contains(&n.as_str()) || Func::from_name(n).is_some() {
                return Err(Error::Model(format!("'{n}' is a reserved name")));
            }
            if !is_identifier(n) {
                return Err(Error::Model(format!("'{n}' is not a valid identifier")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Model(format!("duplicate name '{n}'")));
            }
        }
        let mut out_seen = BTreeSet::new();
        for n in &def.outputs {
            if !out_seen.insert(n.as_str()) {
                return Err(Error::Model(format!("duplicate output name '{n}'")));
            }
        }

        let resolver = Resolver {
            def: &def,
            u_names: def.inputs_u.keys().collect(),
            v_names: def.inputs_v.keys().collect(),
        };
        let compile_block = |exprs: Vec<&Expr>, block: Block, scope: Scope| -> Result<(Vec<Node>, usize)> {
            let mut next_id = 0;
            let nodes = exprs
                .into_iter()
                .enumerate()
                .map(|(index, e)| resolver.compile(e, scope, &ExprLocation { block, index }, &mut next_id))
                .collect::<Result<Vec<_>>>()?;
            Ok((nodes, next_id))
        };
        let (f, _) = compile_block(def.f.iter().collect(), Block::F, Scope::Dynamics)?;
        let (g, g_nonsmooth) = compile_block(def.g.iter().collect(), Block::G, Scope::Constraint)?;
        let (h, _) = compile_block(def.h.iter().collect(), Block::H, Scope::Output)?;
        let (u, _) = compile_block(def.inputs_u.values().collect(), Block::InputU, Scope::Input)?;
        let (v, _) = compile_block(def.inputs_v.values().collect(), Block::InputV, Scope::Input)?;

        Ok(Self {
            def,
            f,
            g,
            h,
            u,
            v,
            g_nonsmooth,
        })
    }

    pub fn def(&self) -> &ModelDef {
        &self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn n_x(&self) -> usize {
        self.def.diff_states.len()
    }

    pub fn n_w(&self) -> usize {
        self.def.alg_states.len()
    }

    pub fn n_y(&self) -> usize {
        self.def.h.len()
    }

    pub fn diff_states(&self) -> &[String] {
        &self.def.diff_states
    }

    pub fn alg_states(&self) -> &[String] {
        &self.def.alg_states
    }

    pub fn outputs(&self) -> &[String] {
        &self.def.outputs
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.def.params.get(name).copied()
    }

    pub fn x0(&self) -> &[f64] {
        &self.def.x0
    }

    /// Initial guess for the algebraic states (ones if the model gives none).
    pub fn w0_guess(&self) -> Vec<f64> {
        self.def.w0_guess.clone().unwrap_or_else(|| vec![1.0; self.n_w()])
    }

    /// Number of `min`/`max`/`abs` nodes in the algebraic block.
    pub fn g_nonsmooth_count(&self) -> usize {
        self.g_nonsmooth
    }

    pub fn is_g_smooth(&self) -> bool {
        self.g_nonsmooth == 0
    }

    /// Values of the input signals `(u(t), v(t))`.
    pub fn input_values(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let eval_inputs = |nodes: &[Node], block: Block| -> Result<Vec<f64>> {
            nodes
                .iter()
                .enumerate()
                .map(|(index, n)| {
                    let loc = ExprLocation { block, index };
                    let ctx: Ctx<'_, f64> = Ctx {
                        t,
                        x: &[],
                        w: &[],
                        u: &[],
                        v: &[],
                        k: 0,
                        branching: Branching::Lexicographic,
                        loc: &loc,
                    };
                    ctx.eval(n)
                })
                .collect()
        };
        Ok((eval_inputs(&self.u, Block::InputU)?, eval_inputs(&self.v, Block::InputV)?))
    }

    /// Evaluate one right-hand-side block. Inputs carry zero directions.
    pub fn eval_block<S: Scalar>(&self, block: Block, t: f64, x: &[S], w: &[S]) -> Result<Vec<S>> {
        self.eval_block_with(block, t, x, w, None, Branching::Lexicographic)
    }

    /// Evaluate with optional input overrides `(u, v)` and branch policy.
    pub fn eval_block_with<S: Scalar>(
        &self,
        block: Block,
        t: f64,
        x: &[S],
        w: &[S],
        inputs: Option<(&[f64], &[f64])>,
        branching: Branching,
    ) -> Result<Vec<S>> {
        if x.len() != self.n_x() || w.len() != self.n_w() {
            return Err(Error::InvalidArgument(format!(
                "state lengths ({}, {}) do not match model ({}, {})",
                x.len(),
                w.len(),
                self.n_x(),
                self.n_w()
            )));
        }
        let k = x[0].k();
        if let Some(bad) = x.iter().chain(w).find(|s| s.k() != k) {
            return Err(Error::DirectionMismatch { left: k, right: bad.k() });
        }
        let (u_vals, v_vals) = match inputs {
            Some((u, v)) => {
                if u.len() != self.u.len() || v.len() != self.v.len() {
                    return Err(Error::InvalidArgument("input override lengths do not match model".into()));
                }
                (u.to_vec(), v.to_vec())
            }
            None => self.input_values(t)?,
        };
        let u: Vec<S> = u_vals.iter().map(|&c| S::constant(c, k)).collect();
        let v: Vec<S> = v_vals.iter().map(|&c| S::constant(c, k)).collect();
        let nodes = match block {
            Block::F => &self.f,
            Block::G => &self.g,
            Block::H => &self.h,
            Block::InputU | Block::InputV => {
                return Err(Error::InvalidArgument("input blocks are evaluated with input_values".into()))
            }
        };
        nodes
            .iter()
            .enumerate()
            .map(|(index, n)| {
                let loc = ExprLocation { block, index };
                let ctx = Ctx {
                    t,
                    x,
                    w,
                    u: &u,
                    v: &v,
                    k,
                    branching,
                    loc: &loc,
                };
                ctx.eval(n)
            })
            .collect()
    }

    pub fn f(&self, t: f64, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.eval_block(Block::F, t, x, w)
    }

    pub fn g(&self, t: f64, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.eval_block(Block::G, t, x, w)
    }

    pub fn h(&self, t: f64, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.eval_block(Block::H, t, x, w)
    }

    /// `g` and an L-derivative of `g` with respect to `w` (a Clarke element
    /// when `g` is nonsmooth), from one LD evaluation with `M = [0; I]`.
    pub fn g_and_jacobian_w(&self, t: f64, x: &[f64], w: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let nw = self.n_w();
        let xs: Vec<LdScalar> = x.iter().map(|&v| LdScalar::constant(v, nw)).collect();
        let ws: Vec<LdScalar> = w
            .iter()
            .enumerate()
            .map(|(i, &v)| LdScalar::variable(v, i, nw))
            .collect();
        let out = self.eval_block(Block::G, t, &xs, &ws)?;
        let mut jac = DMatrix::zeros(nw, nw);
        let mut vals = Vec::with_capacity(nw);
        for (i, s) in out.iter().enumerate() {
            vals.push(s.value());
            for j in 0..nw {
                jac[(i, j)] = s.dirs()[j];
            }
        }
        Ok((vals, jac))
    }

    /// Turn the named parameters into differential states with zero dynamics.
    pub fn augment_parameters(&self, names: &[&str]) -> Result<DaeModel> {
        let mut def = self.def.clone();
        for &name in names {
            let value = def
                .params
                .remove(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?;
            let used_by_input = def.inputs_u.values().chain(def.inputs_v.values()).any(|e| {
                let mut hit = false;
                e.for_each_ident(&mut |n| hit |= n == name);
                hit
            });
            if used_by_input {
                return Err(Error::InvalidArgument(format!(
                    "parameter '{name}' is used by an input signal and cannot become a state"
                )));
            }
            def.diff_states.push(name.to_string());
            def.f.push(Expr::Num(0.0));
            def.x0.push(value);
        }
        DaeModel::new(def)
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => chars.all(|c| c.is_alphanumeric() || c == '_'),
        _ => false,
    }
}
