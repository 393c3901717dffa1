//! Simulation, lexicographic sensitivity analysis, L-SERC observability and
//! sensitivity-based extended Kalman filtering for semi-explicit index-1 DAEs,
//! smooth or nonsmooth.

pub mod error;
pub mod integrator;
pub mod lexcalc;
pub mod linalg;
pub mod model;
pub mod observability;
pub mod sekf;

pub use error::{Error, ParseError, Result};
pub use integrator::{integrate_dae, integrate_sensitivity, IntegratorOptions, SensitivityTrajectory, Trajectory};
pub use lexcalc::{DirectionsMatrix, LdScalar};
pub use model::{builtin_wind_turbine, parse_model, DaeModel, OutputKind};
