//! Command-line runs: configuration layering, orchestration and artifacts.
//!
//! A run starts from a preset, applies command-line flags, then overlays a
//! JSON config file. The file wins over flags except for `--seed`.
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 numerical or I/O failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::duality::{check_convex_superlinear, Grid, GridFunction, LagrangianPair};
use crate::field::{evaluate_u, EvaluationConfig, Moments};
use crate::geometry::{
    derive_c, estimate_intrinsic_lipschitz, estimate_k, HyperplaneSection, IntrinsicConstants, QuotientModel,
};
use crate::io::Artifacts;
use crate::stable::{inverse_moment, sample_stable, FractionalOrder};
use crate::verify::{
    check_classical_limit, check_initial_layer, check_spatial_modulus, check_time_holder, check_time_monotonicity,
    check_upper_bound, default_dpp_pairs, verify_dpp, verify_moments, verify_subsolution,
    verify_subsolution_closed_form, PropertyCheck, ReportConstants, VerificationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Sample,
    Transform,
    Evaluate,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    IdentityQuadratic,
    HyperplaneK4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

/// Identity quotient on a uniform grid over `interval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitySpec {
    pub interval: [f64; 2],
    pub points: usize,
}

/// Hyperplane fibers `{sum x_i = y}` in `R^ambient_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperplaneSpec {
    pub ambient_dim: usize,
    pub interval: [f64; 2],
    pub points: usize,
    pub section: HyperplaneSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuotientSpec {
    Identity(IdentitySpec),
    Hyperplane(HyperplaneSpec),
}

/// `L(v) = |v|^2 / 2`, tabulated on `[-half_width, half_width]` for output.
/// `c` overrides the derived `C = sqrt(2) K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub half_width: f64,
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

/// `L` read from a grid CSV; `H` is computed on `[lo, hi]^d` with
/// `dual_points` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedSpec {
    pub file: PathBuf,
    pub dual_interval: [f64; 2],
    pub dual_points: usize,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LagrangianSpec {
    Quadratic(QuadraticSpec),
    Tabulated(TabulatedSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// `count` uniform times `end / count, ..., end`.
    pub end: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec {
    pub lambdas: Vec<f64>,
    pub times: Vec<f64>,
}

/// Finer base grid and log-spaced short times for the initial layer and
/// Hoelder checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinedSpec {
    pub points: usize,
    /// Evenly spaced probe rows, both ends included.
    pub probes: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalSpec {
    pub beta: f64,
    /// Allowed relative sup-norm distance.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub beta: f64,
    pub quotient: QuotientSpec,
    pub lagrangian: LagrangianSpec,
    pub time: TimeSpec,
    pub n_paths: usize,
    pub seed: u64,
    /// Average only over paths with `E_t >= 1`. When unset, `evaluate` runs
    /// unconditioned and the dynamic-programming check runs conditioned.
    #[serde(default)]
    pub condition_et_ge_1: Option<bool>,
    /// Time at which `sample` reports `E_t`.
    pub sample_time: f64,
    pub moments: MomentSpec,
    pub refined: RefinedSpec,
    pub classical: ClassicalSpec,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Numerical(_) | Self::Io(_) => 3,
        }
    }

    fn config(path: &str, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

/// Tagged objects are buffered by serde, which loses the inner field path;
/// deserializing the selected variant directly recovers it.
fn check_variant(
    value: &Value,
    key: &str,
    check: impl Fn(&str, Value) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let Some(Value::Object(obj)) = value.get(key) else {
        return Ok(());
    };
    let Some(Value::String(kind)) = obj.get("kind") else {
        return Ok(());
    };
    let mut rest = obj.clone();
    rest.remove("kind");
    check(kind, Value::Object(rest))
}

fn deserialize_at<T: serde::de::DeserializeOwned>(prefix: &str, value: Value) -> Result<(), CliError> {
    serde_path_to_error::deserialize::<_, T>(value).map(|_| ()).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        CliError::config(&path, e.into_inner().to_string())
    })
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

impl RunConfig {
    pub fn preset(preset: Preset, command: Command) -> Self {
        let base = Self {
            command,
            beta: 0.5,
            quotient: QuotientSpec::Identity(IdentitySpec {
                interval: [0.0, 10.0],
                points: 41,
            }),
            lagrangian: LagrangianSpec::Quadratic(QuadraticSpec {
                half_width: 5.0,
                points: 101,
                c: None,
            }),
            time: TimeSpec { end: 1.0, count: 20 },
            n_paths: 100_000,
            seed: 20_240_601,
            condition_et_ge_1: None,
            sample_time: 1.0,
            moments: MomentSpec {
                lambdas: vec![1.0, 2.0],
                times: vec![0.5, 1.0, 2.0],
            },
            refined: RefinedSpec {
                points: 4001,
                probes: 9,
                t_min: 1e-3,
                t_max: 1e-1,
                count: 9,
            },
            classical: ClassicalSpec {
                beta: 0.999,
                tolerance: 0.02,
            },
            workers: None,
            out: None,
        };
        match preset {
            Preset::IdentityQuadratic => base,
            Preset::HyperplaneK4 => Self {
                quotient: QuotientSpec::Hyperplane(HyperplaneSpec {
                    ambient_dim: 4,
                    interval: [0.0, 6.0],
                    points: 41,
                    section: HyperplaneSection::Paired {
                        sine: 0.5,
                        linear: 0.25,
                    },
                }),
                lagrangian: LagrangianSpec::Quadratic(QuadraticSpec {
                    half_width: 3.0,
                    points: 25,
                    c: None,
                }),
                // The curvature of g bends max |u - g| below the t^beta law by t ~ 1e-2.
                refined: RefinedSpec {
                    t_min: 1e-5,
                    t_max: 1e-3,
                    ..base.refined.clone()
                },
                ..base
            },
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Deserializes with the failing field path in the diagnostic, then validates.
    pub fn from_value(value: Value) -> Result<Self, CliError> {
        check_variant(&value, "quotient", |kind, v| match kind {
            "identity" => deserialize_at::<IdentitySpec>("quotient", v),
            "hyperplane" => deserialize_at::<HyperplaneSpec>("quotient", v),
            _ => Ok(()),
        })?;
        check_variant(&value, "lagrangian", |kind, v| match kind {
            "quadratic" => deserialize_at::<QuadraticSpec>("lagrangian", v),
            "tabulated" => deserialize_at::<TabulatedSpec>("lagrangian", v),
            _ => Ok(()),
        })?;
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::config(".", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.beta) {
            return Err(CliError::config("beta", format!("must lie in (0, 1), got {}", self.beta)));
        }
        if self.n_paths < 100 {
            return Err(CliError::config("n_paths", format!("must be at least 100, got {}", self.n_paths)));
        }
        if !(self.time.end > 0.0 && self.time.end.is_finite()) {
            return Err(CliError::config("time.end", "must be positive and finite"));
        }
        if self.time.count < 2 {
            return Err(CliError::config("time.count", "must be at least 2"));
        }
        let (interval, points, min_points) = match &self.quotient {
            QuotientSpec::Identity(IdentitySpec { interval, points }) => (interval, *points, 2),
            QuotientSpec::Hyperplane(HyperplaneSpec {
                ambient_dim, interval, points, ..
            }) => {
                if *ambient_dim == 0 || !ambient_dim.is_multiple_of(2) {
                    return Err(CliError::config("quotient.ambient_dim", "must be even and positive"));
                }
                (interval, *points, 3)
            }
        };
        if !(interval[0] < interval[1] && interval[0].is_finite() && interval[1].is_finite()) {
            return Err(CliError::config("quotient.interval", "must be a finite interval [lo, hi] with lo < hi"));
        }
        if points < min_points {
            return Err(CliError::config("quotient.points", format!("must be at least {min_points}")));
        }
        match &self.lagrangian {
            LagrangianSpec::Quadratic(QuadraticSpec { half_width, points, c }) => {
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return Err(CliError::config("lagrangian.half_width", "must be positive and finite"));
                }
                if *points < 3 {
                    return Err(CliError::config("lagrangian.points", "must be at least 3"));
                }
                if let Some(c) = c {
                    if !(*c > 0.0 && c.is_finite()) {
                        return Err(CliError::config("lagrangian.c", "must be positive and finite"));
                    }
                }
            }
            LagrangianSpec::Tabulated(TabulatedSpec {
                dual_interval,
                dual_points,
                c,
                ..
            }) => {
                if !(dual_interval[0] < dual_interval[1] && dual_interval.iter().all(|x| x.is_finite())) {
                    return Err(CliError::config("lagrangian.dual_interval", "must be a finite interval with lo < hi"));
                }
                if *dual_points < 3 {
                    return Err(CliError::config("lagrangian.dual_points", "must be at least 3"));
                }
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(CliError::config("lagrangian.c", "must be positive and finite"));
                }
            }
        }
        if !(self.sample_time >= 0.0 && self.sample_time.is_finite()) {
            return Err(CliError::config("sample_time", "must be non-negative and finite"));
        }
        if self.moments.lambdas.is_empty() || self.moments.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(CliError::config("moments.lambdas", "must be a non-empty list of positive numbers"));
        }
        if self.moments.times.is_empty() || self.moments.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(CliError::config("moments.times", "must be a non-empty list of non-negative numbers"));
        }
        let r = &self.refined;
        if r.points < min_points.max(3) {
            return Err(CliError::config("refined.points", "must be at least 3"));
        }
        if r.probes < 2 || r.probes > r.points {
            return Err(CliError::config("refined.probes", "must lie between 2 and refined.points"));
        }
        if !(r.t_min > 0.0 && r.t_min < r.t_max && r.t_max.is_finite()) {
            return Err(CliError::config("refined.t_min", "need 0 < t_min < t_max"));
        }
        if r.count < 3 {
            return Err(CliError::config("refined.count", "must be at least 3"));
        }
        if !open_unit(self.classical.beta) {
            return Err(CliError::config("classical.beta", "must lie in (0, 1)"));
        }
        if !(self.classical.tolerance > 0.0) {
            return Err(CliError::config("classical.tolerance", "must be positive"));
        }
        if self.workers == Some(0) {
            return Err(CliError::config("workers", "must be at least 1"));
        }
        Ok(())
    }

    pub fn order(&self) -> FractionalOrder {
        FractionalOrder::new(self.beta).expect("beta validated")
    }

    pub fn times(&self) -> Vec<f64> {
        EvaluationConfig::uniform_times(self.time.end, self.time.count)
    }

    /// Log-spaced short times of the refined run.
    pub fn refined_times(&self) -> Vec<f64> {
        let r = &self.refined;
        let (a, b) = (r.t_min.ln(), r.t_max.ln());
        let mut t: Vec<f64> = (0..r.count)
            .map(|k| (a + (b - a) * k as f64 / (r.count - 1) as f64).exp())
            .collect();
        t[0] = r.t_min;
        t[r.count - 1] = r.t_max;
        t
    }

    pub fn refined_probes(&self) -> Vec<usize> {
        let r = &self.refined;
        (0..r.probes)
            .map(|k| (k * (r.points - 1) + (r.probes - 1) / 2) / (r.probes - 1))
            .collect()
    }

    pub fn model(&self) -> Result<QuotientModel, CliError> {
        self.model_with_points(None)
    }

    fn model_with_points(&self, points: Option<usize>) -> Result<QuotientModel, CliError> {
        match &self.quotient {
            QuotientSpec::Identity(IdentitySpec { interval, points: n }) => {
                QuotientModel::identity_interval(interval[0], interval[1], points.unwrap_or(*n))
            }
            QuotientSpec::Hyperplane(HyperplaneSpec {
                ambient_dim,
                interval,
                points: n,
                section,
            }) => QuotientModel::hyperplane(*ambient_dim, (interval[0], interval[1]), points.unwrap_or(*n), *section),
        }
        .map_err(numerical)
    }

    pub fn refined_model(&self) -> Result<QuotientModel, CliError> {
        self.model_with_points(Some(self.refined.points))
    }

    /// Lagrangian pair with `C` derived from `K` or taken from the config.
    pub fn pair(&self, model: &QuotientModel) -> Result<(LagrangianPair, IntrinsicConstants), CliError> {
        let k = estimate_k(model).map_err(numerical)?;
        let ell = estimate_intrinsic_lipschitz(model).map_err(numerical)?;
        let dim = model.ambient_dim();
        let (pair, c, c_derived) = match &self.lagrangian {
            LagrangianSpec::Quadratic(QuadraticSpec { half_width, points, c }) => {
                let probe = LagrangianPair::quadratic(*half_width, *points, 1.0).map_err(numerical)?;
                let (c, derived) = match c {
                    Some(c) => (*c, false),
                    None => {
                        let d = derive_c(k, &probe).map_err(numerical)?;
                        if d.degenerate {
                            return Err(CliError::Numerical("K = 0 makes the derived C vanish; supply lagrangian.c".into()));
                        }
                        (d.value, true)
                    }
                };
                (probe.with_constant(c).map_err(numerical)?, c, derived)
            }
            LagrangianSpec::Tabulated(TabulatedSpec {
                file,
                dual_interval,
                dual_points,
                c,
            }) => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| CliError::config("lagrangian.file", format!("{}: {e}", file.display())))?;
                let l = GridFunction::from_csv(&text).map_err(|e| CliError::config("lagrangian.file", e.to_string()))?;
                if l.dim() != dim {
                    return Err(CliError::config(
                        "lagrangian.file",
                        format!("table has dimension {} but the ambient space has dimension {dim}", l.dim()),
                    ));
                }
                let dual = Grid::uniform_cube(l.dim(), dual_interval[0], dual_interval[1], *dual_points)
                    .map_err(numerical)?;
                (LagrangianPair::from_lagrangian(l, &dual, *c).map_err(numerical)?, *c, false)
            }
        };
        Ok((pair, IntrinsicConstants { k, ell, c, c_derived }))
    }
}

#[derive(Debug, Parser)]
#[command(name = "hopflax", version, about = "Monte Carlo Hopf-Lax values for time-fractional Hamilton-Jacobi equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Draw D_1 and E_t and tabulate moments.
    Sample,
    /// Tabulate L and its Legendre conjugate H.
    Transform,
    /// Estimate u on the base grid and time grid.
    Evaluate,
    /// Run every property check and write a report.
    Verify,
}

impl CliCommand {
    fn command(&self) -> Command {
        match self {
            Self::Sample => Command::Sample,
            Self::Transform => Command::Transform,
            Self::Evaluate => Command::Evaluate,
            Self::Verify => Command::Verify,
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Order of the Caputo derivative, in (0, 1).
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// JSON file overlaid on the preset and flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default `hopflax-out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Average only over paths with E_t >= 1.
    #[arg(long = "condition-et-ge-1", global = true, value_enum)]
    pub condition: Option<OnOff>,
    /// Time at which `sample` draws E_t.
    #[arg(long, global = true)]
    pub time: Option<f64>,
}

/// Recursive object merge; a tagged object whose `kind` changes is replaced.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => {
                        let kind_changes = matches!((&*slot, &v), (Value::Object(x), Value::Object(y))
                            if y.get("kind").is_some() && x.get("kind") != y.get("kind"));
                        if kind_changes {
                            *slot = v;
                        } else {
                            overlay(slot, v);
                        }
                    }
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}

/// Preset, then flags, then the config file, then `--seed`.
pub fn resolve_config(command: Command, flags: &Flags) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::preset(flags.preset.unwrap_or(Preset::IdentityQuadratic), command);
    if let Some(b) = flags.beta {
        cfg.beta = b;
    }
    if let Some(n) = flags.paths {
        cfg.n_paths = n;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(c) = flags.condition {
        cfg.condition_et_ge_1 = Some(c == OnOff::On);
    }
    if let Some(t) = flags.time {
        cfg.sample_time = t;
    }
    let mut value = cfg.to_value();
    value["workers"] = json!(flags.workers);
    value["out"] = json!(flags.out);
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(CliError::config(".", "config file must hold a JSON object"));
        }
        overlay(&mut value, file);
    }
    if let Some(s) = flags.seed {
        value["seed"] = json!(s);
    }
    value["command"] = serde_json::to_value(command).expect("command serializes");
    RunConfig::from_value(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub artifacts: Artifacts,
    /// False only when a verification check failed.
    pub passed: bool,
    /// Human-readable progress lines with timings.
    pub log: Vec<String>,
}

/// Computes every artifact of `cfg` in memory.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    match cfg.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cfg))
        }
        None => dispatch(cfg),
    }
}

fn dispatch(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    match cfg.command {
        Command::Sample => run_sample(cfg),
        Command::Transform => run_transform(cfg),
        Command::Evaluate => run_evaluate(cfg),
        Command::Verify => run_verify(cfg),
    }
}

/// Computes and writes the artifacts of `cfg`; nothing is written on error.
pub fn run(cfg: &RunConfig) -> Result<(RunOutcome, Vec<PathBuf>), CliError> {
    let outcome = execute(cfg)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("hopflax-out"));
    let written = outcome.artifacts.write_all(&dir)?;
    Ok((outcome, written))
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn run_sample(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let beta = cfg.order();
    let stable = sample_stable(beta, cfg.n_paths, cfg.seed).map_err(numerical)?;
    let b = beta.value();
    let mut stable_csv = String::from("path,d1\n");
    let mut inverse_csv = String::from("path,e_t\n");
    for (i, &d) in stable.values.iter().enumerate() {
        let _ = writeln!(stable_csv, "{i},{d}");
        let _ = writeln!(inverse_csv, "{i},{}", crate::stable::inverse_time(b, cfg.sample_time, d));
    }
    let mut moments_csv = String::from("lambda,t,mean,stderr,exact\n");
    for &lambda in &cfg.moments.lambdas {
        for &t in &cfg.moments.times {
            let mut m = Moments::default();
            for &d in &stable.values {
                m.push(crate::stable::inverse_time(b, t, d).powf(lambda));
            }
            let exact = inverse_moment(beta, lambda, t).map_err(numerical)?;
            let _ = writeln!(moments_csv, "{lambda},{t},{},{},{exact}", m.mean, m.stderr());
        }
    }
    let mut artifacts = Artifacts::new();
    artifacts.add("stable.csv", stable_csv);
    artifacts.add("inverse.csv", inverse_csv);
    artifacts.add("moments.csv", moments_csv);
    artifacts.add("sample.json", json_text(&json!({ "config": cfg.to_value() })));
    Ok(RunOutcome {
        artifacts,
        passed: true,
        log: vec![],
    })
}

fn run_transform(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let model = cfg.model()?;
    let (pair, constants) = cfg.pair(&model)?;
    let mut artifacts = Artifacts::new();
    artifacts.add("lagrangian.csv", pair.lagrangian().to_csv());
    artifacts.add("hamiltonian.csv", pair.hamiltonian().to_csv());
    let meta = json!({
        "config": cfg.to_value(),
        "constants": constants,
        "quadratic": pair.is_quadratic(),
        "truncated_points": pair.truncated_points(),
        "lagrangian_convexity": check_convex_superlinear(pair.lagrangian()),
        "hamiltonian_convexity": check_convex_superlinear(pair.hamiltonian()),
    });
    artifacts.add("transform.json", json_text(&meta));
    Ok(RunOutcome {
        artifacts,
        passed: true,
        log: vec![],
    })
}

fn run_evaluate(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let model = cfg.model()?;
    let (pair, constants) = cfg.pair(&model)?;
    let mut ecfg = EvaluationConfig::new(cfg.n_paths, cfg.seed, cfg.times());
    ecfg.condition_et_ge_1 = cfg.condition_et_ge_1.unwrap_or(false);
    let start = Instant::now();
    let field = evaluate_u(&model, &pair, cfg.order(), &ecfg).map_err(numerical)?;
    let log = vec![format!("evaluate: {:.2}s", start.elapsed().as_secs_f64())];
    let meta = json!({
        "config": cfg.to_value(),
        "constants": constants,
        "times": field.times,
        "acceptance_rates": field.acceptance_rates(),
        "path_monotonicity_violations": field.path_monotonicity_violations,
    });
    let mut artifacts = Artifacts::new();
    artifacts.add("field.csv", field.to_csv(&model));
    artifacts.add("field.json", json_text(&meta));
    Ok(RunOutcome {
        artifacts,
        passed: true,
        log,
    })
}

/// Runs the full check suite of `cfg` and returns the report.
pub fn verification_report(cfg: &RunConfig, log: &mut Vec<String>) -> Result<VerificationReport, CliError> {
    let beta = cfg.order();
    let model = cfg.model()?;
    let (pair, constants) = cfg.pair(&model)?;
    let dim = model.ambient_dim();
    let mut checks: Vec<PropertyCheck> = Vec::new();
    let mut record = |log: &mut Vec<String>, c: PropertyCheck| {
        log.push(format!(
            "{:<28} {:?} ({:.2}s)",
            c.name,
            c.status,
            c.elapsed.as_secs_f64()
        ));
        checks.push(c);
    };

    record(
        log,
        verify_moments(beta, &cfg.moments.lambdas, &cfg.moments.times, cfg.n_paths, cfg.seed).map_err(numerical)?,
    );

    let start = Instant::now();
    let coarse_cfg = EvaluationConfig::new(cfg.n_paths, cfg.seed, cfg.times());
    let coarse = evaluate_u(&model, &pair, beta, &coarse_cfg).map_err(numerical)?;
    log.push(format!("{:<28} ({:.2}s)", "evaluate field", start.elapsed().as_secs_f64()));
    record(log, check_upper_bound(&coarse, &pair, dim).map_err(numerical)?);
    record(log, check_time_monotonicity(&coarse).map_err(numerical)?);
    record(log, check_spatial_modulus(&coarse, &model, &pair).map_err(numerical)?);

    let start = Instant::now();
    let fine_model = cfg.refined_model()?;
    let (fine_pair, fine_constants) = cfg.pair(&fine_model)?;
    let mut fine_cfg = EvaluationConfig::new(cfg.n_paths, cfg.seed, cfg.refined_times());
    fine_cfg.x_indices = Some(cfg.refined_probes());
    let fine = evaluate_u(&fine_model, &fine_pair, beta, &fine_cfg).map_err(numerical)?;
    log.push(format!("{:<28} ({:.2}s)", "evaluate refined field", start.elapsed().as_secs_f64()));
    let (slope, bound) = check_initial_layer(&fine, &fine_pair, dim, fine_constants.ell).map_err(numerical)?;
    record(log, slope);
    record(log, bound);
    record(log, check_time_holder(&fine).map_err(numerical)?);

    let mut dpp_cfg = coarse_cfg.clone();
    dpp_cfg.condition_et_ge_1 = cfg.condition_et_ge_1.unwrap_or(true);
    record(
        log,
        verify_dpp(&model, &pair, beta, &dpp_cfg, &default_dpp_pairs(&coarse_cfg.time_grid)).map_err(numerical)?,
    );

    let q_set: Vec<usize> = (0..model.len()).collect();
    record(log, verify_subsolution(&coarse, &model, &pair, &q_set).map_err(numerical)?);

    if matches!(cfg.quotient, QuotientSpec::Identity(_)) && pair.is_quadratic() {
        let q_values: Vec<f64> = model.base_points().iter().map(|p| p[0]).collect();
        record(
            log,
            verify_subsolution_closed_form(beta, constants.c, &q_values, &coarse_cfg.time_grid).map_err(numerical)?,
        );
    }

    let start = Instant::now();
    let classical_beta = FractionalOrder::new(cfg.classical.beta).map_err(numerical)?;
    let near = evaluate_u(&model, &pair, classical_beta, &coarse_cfg).map_err(numerical)?;
    log.push(format!("{:<28} ({:.2}s)", "evaluate classical field", start.elapsed().as_secs_f64()));
    record(log, check_classical_limit(&near, &model, &pair, cfg.classical.tolerance).map_err(numerical)?);

    Ok(VerificationReport::new(
        cfg.to_value(),
        ReportConstants {
            beta: cfg.beta,
            k: constants.k,
            ell: constants.ell,
            c: constants.c,
        },
        checks,
    ))
}

fn run_verify(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut log = Vec::new();
    let report = verification_report(cfg, &mut log)?;
    let mut artifacts = Artifacts::new();
    artifacts.add("report.json", report.to_json());
    artifacts.add("report.txt", report.to_text());
    Ok(RunOutcome {
        artifacts,
        passed: report.all_passed,
        log,
    })
}

/// Parses `args`, runs, writes artifacts and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let started = Instant::now();
    let result = resolve_config(cli.command.command(), &cli.flags).and_then(|cfg| run(&cfg));
    match result {
        Ok((outcome, written)) => {
            for line in &outcome.log {
                eprintln!("{line}");
            }
            for p in &written {
                eprintln!("wrote {}", display(p));
            }
            eprintln!("wall clock {:.2}s", started.elapsed().as_secs_f64());
            if outcome.passed {
                0
            } else {
                eprintln!("verification failed");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
