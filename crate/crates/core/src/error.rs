use std::fmt;

use thiserror::Error;

use crate::model::ExprLocation;

/// Syntax or validation problem in a model expression or document.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            column,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("direction count mismatch: {left} vs {right}")]
    DirectionMismatch { left: usize, right: usize },

    #[error("domain error in {location}: {message}")]
    Domain {
        location: ExprLocation,
        message: String,
    },

    #[error("algebraic solve did not converge at t = {t} after {iterations} iterations (residual {residual:e})")]
    NewtonFailed {
        t: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("regularity violation at t = {t}: dg/dw condition estimate {condition:e}")]
    Regularity { t: f64, condition: f64 },

    #[error("sensitivity algebraic solve failed at t = {t}, column {column}: {message}")]
    SensitivitySolve {
        t: f64,
        column: usize,
        message: String,
    },

    #[error("no nonsmooth branch yields a consistent sensitivity column at t = {t}, column {column}")]
    BranchExhausted { t: f64, column: usize },

    #[error("noise covariance: {0}")]
    Noise(String),

    #[error("numerical linear algebra failure: {0}")]
    Linalg(String),

    #[error("direction {direction}: {source}")]
    Direction {
        direction: DirectionLabel,
        #[source]
        source: Box<Error>,
    },

    #[error("filter step {step} (t = {t}): {source}")]
    FilterStep {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
        partial: Box<crate::sekf::FilterRun>,
    },
}

impl Error {
    /// Parse-type failures (as opposed to numerical ones).
    pub fn is_parse(&self) -> bool {
        matches!(self, Error::Parse(_) | Error::Model(_))
    }
}

/// Printable tag for a probing direction in error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionLabel(pub Option<Vec<f64>>);

impl fmt::Display for DirectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            None => write!(f, "identity"),
            Some(d) => write!(f, "{d:?}"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
