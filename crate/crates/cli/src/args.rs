use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const MODEL_SCHEMA: &str = "\
MODEL DOCUMENTS (--model FILE, TOML):
  name        = \"decay\"            model name
  diff_states = [\"x\"]              differential states
  alg_states  = [\"w\"]              algebraic states (optional)
  outputs     = [\"y\"]              output names
  f  = [\"-k * x + u1\"]             dx/dt, one per differential state
  g  = [\"w - x\"]                   0 = g, one per algebraic state
  h  = [\"min(w, 0.98)\"]            outputs, one per output
  x0 = [1.0]                       differential initial condition
  w0_guess = [1.0]                 starting guess for w0 (optional, default 1)
  [params]                         named constants
  k = 1.0
  [inputs_u]                       inputs visible to f and h, functions of t
  u1 = \"0.1 * sin(t)\"
  [inputs_v]                       inputs visible to g and h, functions of t

EXPRESSIONS:
  numbers, names, + - * / ^ (left-associative, ^ binds tighter than unary -),
  parentheses, and min max abs exp log sqrt sin cos. `t` is time.";

#[derive(Parser, Debug)]
#[command(
    name = "daeobs",
    version,
    about = "Simulate DAEs, test L-SERC observability and run a sensitivity-based EKF",
    after_long_help = MODEL_SCHEMA
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the model and write the trajectory CSV.
    #[command(after_long_help = MODEL_SCHEMA)]
    Sim(SimArgs),
    /// Run the L-SERC observability test and write a JSON report.
    #[command(after_long_help = MODEL_SCHEMA)]
    Obs(ObsArgs),
    /// Run the sensitivity-based EKF on measured or synthesized outputs.
    #[command(after_long_help = MODEL_SCHEMA)]
    Sekf(SekfArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    /// Wind turbine with output y = E_q * V.
    WindSmooth,
    /// Wind turbine with output y = min(V, 0.98).
    WindMin,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Built-in model.
    #[arg(long, value_enum, conflicts_with = "model", required_unless_present = "model")]
    pub builtin: Option<Builtin>,
    /// TOML model document.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tf: f64,
    /// Integration step.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Newton tolerance for the algebraic equations (infinity norm).
    #[arg(long, default_value_t = 1e-10)]
    pub newton_tol: f64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct ObsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of uniform sample points on [t0, tf].
    #[arg(long, default_value_t = 11)]
    pub samples: usize,
    /// Probing directions as `d1,d2;d1,d2;...` (default: ±e_i).
    #[arg(long, conflicts_with = "identity")]
    pub directions: Option<String>,
    /// Use M = I (classical SERC) instead of probing directions.
    #[arg(long)]
    pub identity: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_rank: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps_piv: f64,
}

#[derive(Args, Debug, Clone)]
pub struct SekfArgs {
    #[command(flatten)]
    pub common: Common,
    /// Measurement CSV with header `t,y_<name>...`.
    #[arg(long, conflicts_with = "synthesize")]
    pub meas: Option<PathBuf>,
    /// Synthesize truth and measurements with seeded noise.
    #[arg(long)]
    pub synthesize: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of measurements when synthesizing, uniform on (t0, tf].
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Process covariance per unit time: scalar (σ²·I) or matrix file.
    #[arg(long, default_value = "1e-4")]
    pub q: String,
    /// Measurement covariance: scalar (σ²·I) or matrix file.
    #[arg(long, default_value = "1e-4")]
    pub r: String,
    /// Initial covariance: scalar (p·I) or matrix file.
    #[arg(long, default_value = "4")]
    pub p0: String,
    /// Euler-Maruyama step for truth synthesis.
    #[arg(long, default_value_t = 1e-3)]
    pub dt_sim: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_rank: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps_piv: f64,
    /// Run metadata JSON.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Truth trajectory CSV (with --synthesize).
    #[arg(long, requires = "synthesize")]
    pub truth: Option<PathBuf>,
    /// Synthesized measurement CSV (with --synthesize).
    #[arg(long, requires = "synthesize")]
    pub meas_out: Option<PathBuf>,
}
