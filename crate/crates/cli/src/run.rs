use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use daeobs::model::{consistent_init, NewtonOptions};
use daeobs::observability::{axis_probes, run_lserc, uniform_samples, ObservabilityOptions, Probe};
use daeobs::sekf::{run_sekf, synthesize_truth, FilterMetadata, MeasurementSeries, NoiseSpec, SekfConfig};
use daeobs::{builtin_wind_turbine, integrate_dae, parse_model, DaeModel, Error, IntegratorOptions, OutputKind};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{Builtin, Common, ObsArgs, SekfArgs, SimArgs};

/// Failure with its exit code: 1 for input problems, 2 for numerical ones.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_parse() => 1,
            Error::InvalidArgument(_) | Error::Noise(_) => 1,
            _ => 2,
        };
        let mut message = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            let text = s.to_string();
            if !message.contains(&text) {
                message.push_str(&format!("\n  caused by: {text}"));
            }
            src = s.source();
        }
        Self { code, message }
    }
}

type Outcome<T> = Result<T, Failure>;

/// Resolved configuration, embedded in every output file.
#[derive(Serialize)]
struct RunConfig<'a> {
    command: &'static str,
    model_source: ModelSource,
    model_name: &'a str,
    t0: f64,
    tf: f64,
    h: f64,
    newton_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    directions: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_rank: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_piv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<serde_json::Value>,
    outputs: Vec<Option<PathBuf>>,
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum ModelSource {
    Builtin(Builtin),
    Path(PathBuf),
}

fn load_model(c: &Common) -> Outcome<(DaeModel, ModelSource)> {
    match (&c.builtin, &c.model) {
        (Some(b), _) => {
            let kind = match b {
                Builtin::WindSmooth => OutputKind::Smooth,
                Builtin::WindMin => OutputKind::MinThreshold,
            };
            Ok((builtin_wind_turbine(kind), ModelSource::Builtin(*b)))
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::input(format!("cannot read {}: {e}", p.display())))?;
            let model = parse_model(&text).map_err(|e| {
                let mut f = Failure::from(e);
                f.message = format!("{}: {}", p.display(), f.message);
                f
            })?;
            Ok((model, ModelSource::Path(p.clone())))
        }
        (None, None) => Err(Failure::input("one of --builtin or --model is required")),
    }
}

fn check_window(c: &Common) -> Outcome<()> {
    if !(c.t0.is_finite() && c.tf.is_finite()) || c.tf < c.t0 {
        return Err(Failure::input(format!("need finite t0 <= tf, got t0 = {}, tf = {}", c.t0, c.tf)));
    }
    if !(c.h > 0.0) || !(c.newton_tol > 0.0) {
        return Err(Failure::input("--h and --newton-tol must be positive"));
    }
    Ok(())
}

fn integrator(c: &Common) -> IntegratorOptions {
    IntegratorOptions {
        step: c.h,
        newton: NewtonOptions {
            tol: c.newton_tol,
            ..NewtonOptions::default()
        },
        ..IntegratorOptions::default()
    }
}

fn initial_state(model: &DaeModel, c: &Common) -> Outcome<(Vec<f64>, Vec<f64>)> {
    let x0 = model.x0().to_vec();
    let w0 = consistent_init(model, c.t0, &x0, &model.w0_guess(), &integrator(c).newton)?;
    Ok((x0, w0))
}

/// Open `path`, or stdout when `None`.
fn sink(path: Option<&Path>) -> Outcome<Box<dyn Write>> {
    match path {
        Some(p) => fs::File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn io_failure(e: io::Error) -> Failure {
    if e.kind() == io::ErrorKind::BrokenPipe {
        return Failure { code: 0, message: String::new() };
    }
    Failure::input(format!("write failed: {e}"))
}

fn write_csv_header(out: &mut dyn Write, config: &RunConfig) -> io::Result<()> {
    let json = serde_json::to_string(config).expect("config serializes");
    writeln!(out, "# daeobs {} {}", config.command, env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# config: {json}")
}

fn write_json(path: Option<&Path>, config: &RunConfig, key: &str, value: &impl Serialize) -> Outcome<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    doc.insert(key.into(), serde_json::to_value(value).expect("report serializes"));
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| Failure::input(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_failure)
}

fn base_config<'a>(command: &'static str, c: &Common, model: &'a DaeModel, source: ModelSource) -> RunConfig<'a> {
    RunConfig {
        command,
        model_source: source,
        model_name: model.name(),
        t0: c.t0,
        tf: c.tf,
        h: c.h,
        newton_tol: c.newton_tol,
        samples: None,
        directions: None,
        eps_rank: None,
        eps_piv: None,
        noise: None,
        outputs: vec![c.out.clone()],
    }
}

pub fn sim(a: &SimArgs) -> Outcome<()> {
    let c = &a.common;
    check_window(c)?;
    let (model, source) = load_model(c)?;
    let (x0, w0) = initial_state(&model, c)?;
    let traj = integrate_dae(&model, c.t0, c.tf, &x0, &w0, &integrator(c))?;
    let config = base_config("sim", c, &model, source);
    let mut out = sink(c.out.as_deref())?;
    write_csv_header(&mut *out, &config)
        .and_then(|_| traj.write_csv(&model, &mut out))
        .and_then(|_| out.flush())
        .map_err(io_failure)
}

fn parse_directions(spec: &str, n_x: usize) -> Outcome<Vec<Probe>> {
    spec.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|d| {
            let v = d
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::input(format!("bad direction `{d}`: {e}")))?;
            if v.len() != n_x {
                return Err(Failure::input(format!("direction `{d}` needs {n_x} entries")));
            }
            Ok(Probe::Direction(v))
        })
        .collect()
}

pub fn obs(a: &ObsArgs) -> Outcome<()> {
    let c = &a.common;
    check_window(c)?;
    if a.samples == 0 || !(a.eps_rank > 0.0) || !(a.eps_piv > 0.0) {
        return Err(Failure::input("--samples, --eps-rank and --eps-piv must be positive"));
    }
    let (model, source) = load_model(c)?;
    let probes = if a.identity {
        vec![Probe::Identity]
    } else if let Some(d) = &a.directions {
        parse_directions(d, model.n_x())?
    } else {
        axis_probes(model.n_x())
    };
    if probes.is_empty() {
        return Err(Failure::input("no directions given"));
    }
    let (x0, w0) = initial_state(&model, c)?;
    let opts = ObservabilityOptions {
        eps_rank: a.eps_rank,
        eps_piv: a.eps_piv,
        integrator: integrator(c),
    };
    let samples = uniform_samples(c.t0, c.tf, a.samples);
    let report = run_lserc(&model, &x0, &w0, &probes, &samples, &opts)?;
    let mut config = base_config("obs", c, &model, source);
    config.samples = Some(a.samples);
    config.eps_rank = Some(a.eps_rank);
    config.eps_piv = Some(a.eps_piv);
    config.directions = Some(match (a.identity, &a.directions) {
        (true, _) => serde_json::json!("identity"),
        (false, Some(d)) => serde_json::json!(d),
        (false, None) => serde_json::json!("pm-axes"),
    });
    write_json(c.out.as_deref(), &config, "report", &report)
}

/// Scalar `s` gives `s·I`; anything else is read as a matrix file with one
/// row per line, entries separated by whitespace or commas.
fn matrix_arg(flag: &str, value: &str, n: usize) -> Outcome<DMatrix<f64>> {
    if let Ok(s) = value.trim().parse::<f64>() {
        return Ok(DMatrix::identity(n, n) * s);
    }
    let text = fs::read_to_string(value)
        .map_err(|e| Failure::input(format!("--{flag}: `{value}` is neither a number nor a readable file: {e}")))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::input(format!("--{flag}: {value}: {e}")))?;
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Failure::input(format!("--{flag}: {value} must hold a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub fn sekf(a: &SekfArgs) -> Outcome<()> {
    let c = &a.common;
    check_window(c)?;
    if a.meas.is_none() && !a.synthesize {
        return Err(Failure::input("no measurement source: pass --meas FILE or --synthesize"));
    }
    let (model, source) = load_model(c)?;
    let (n_x, n_y) = (model.n_x(), model.n_y());
    let noise = NoiseSpec {
        q: matrix_arg("q", &a.q, n_x)?,
        r: matrix_arg("r", &a.r, n_y)?,
        seed: a.seed,
    };
    let p0 = matrix_arg("p0", &a.p0, n_x)?;
    let (x0, w0) = initial_state(&model, c)?;
    let mut config_sekf = SekfConfig::new(p0);
    config_sekf.observability = ObservabilityOptions {
        eps_rank: a.eps_rank,
        eps_piv: a.eps_piv,
        integrator: integrator(c),
    };

    let mut config = base_config("sekf", c, &model, source);
    config.eps_rank = Some(a.eps_rank);
    config.eps_piv = Some(a.eps_piv);
    config.noise = Some(serde_json::json!({
        "q": rows(&noise.q),
        "r": rows(&noise.r),
        "p0": rows(&config_sekf.p0),
        "seed": a.seed,
        "steps": a.steps,
        "dt_sim": a.dt_sim,
        "synthesize": a.synthesize,
        "meas": a.meas,
    }));
    config.outputs = vec![c.out.clone(), a.meta.clone(), a.truth.clone(), a.meas_out.clone()];

    let meas = if let Some(path) = &a.meas {
        let f = fs::File::open(path)
            .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
        MeasurementSeries::read_csv(&model, f)?
    } else {
        if a.steps == 0 || !(a.dt_sim > 0.0) || !(c.tf > c.t0) {
            return Err(Failure::input("--steps, --dt-sim and tf - t0 must be positive"));
        }
        let times: Vec<f64> = (1..=a.steps)
            .map(|k| if k == a.steps { c.tf } else { c.t0 + (c.tf - c.t0) * k as f64 / a.steps as f64 })
            .collect();
        let (truth, meas) = synthesize_truth(
            &model,
            &noise,
            c.t0,
            c.tf,
            a.dt_sim,
            &x0,
            &w0,
            &times,
            &config_sekf.observability.integrator.newton,
        )?;
        if let Some(p) = &a.truth {
            let mut out = sink(Some(p))?;
            write_csv_header(&mut *out, &config)
                .and_then(|_| truth.write_csv(&model, &mut out))
                .and_then(|_| out.flush())
                .map_err(io_failure)?;
        }
        if let Some(p) = &a.meas_out {
            let mut out = sink(Some(p))?;
            write_csv_header(&mut *out, &config)
                .and_then(|_| meas.write_csv(&model, &mut out))
                .and_then(|_| out.flush())
                .map_err(io_failure)?;
        }
        meas
    };

    let (run, failure) = match run_sekf(&model, &noise, c.t0, &x0, &w0, &config_sekf, &meas) {
        Ok(run) => (run, None),
        Err(Error::FilterStep { step, t, source, partial }) => {
            let f = Failure::from(Error::FilterStep {
                step,
                t,
                source,
                partial: Box::default(),
            });
            (*partial, Some(f))
        }
        Err(e) => return Err(e.into()),
    };
    let mut out = sink(c.out.as_deref())?;
    write_csv_header(&mut *out, &config)
        .and_then(|_| run.write_csv(&model, &mut out))
        .and_then(|_| out.flush())
        .map_err(io_failure)?;
    if a.meta.is_some() {
        let meta = FilterMetadata::new(&model, &noise, &config_sekf);
        write_json(a.meta.as_deref(), &config, "metadata", &meta)?;
    }
    failure.map_or(Ok(()), Err)
}
