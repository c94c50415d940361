//! Python bindings: stable sampling, fractional operators, the Legendre
//! transform, quotient models, value-field evaluation and CLI-equivalent runs.

use std::collections::BTreeMap;

use hopflax_core::cli::{execute, RunConfig};
use hopflax_core::duality::{legendre_transform, Grid};
use hopflax_core::field::{evaluate_u, EvaluationConfig};
use hopflax_core::fractional::{caputo_l1, fractional_integral, rl_derivative, TimeSeries};
use hopflax_core::geometry::{estimate_intrinsic_lipschitz, estimate_k, HyperplaneSection};
use hopflax_core::stable;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn order(beta: f64) -> PyResult<hopflax_core::FractionalOrder> {
    hopflax_core::FractionalOrder::new(beta).map_err(err)
}

/// `n` draws of `D_1` (Laplace transform `exp(-s^beta)`).
#[pyfunction]
fn sample_stable(py: Python<'_>, beta: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let b = order(beta)?;
    py.detach(|| stable::sample_stable(b, n, seed)).map(|s| s.values).map_err(err)
}

/// `n` draws of `E_t = (t / D_1)^beta` from the same streams as `sample_stable`.
#[pyfunction]
fn sample_inverse(py: Python<'_>, beta: f64, t: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let b = order(beta)?;
    py.detach(|| stable::sample_inverse(b, t, n, seed)).map(|s| s.values).map_err(err)
}

/// `E[E_t^lambda] = Gamma(lambda + 1) / Gamma(lambda beta + 1) t^(lambda beta)`.
#[pyfunction]
fn inverse_moment(beta: f64, lam: f64, t: f64) -> PyResult<f64> {
    stable::inverse_moment(order(beta)?, lam, t).map_err(err)
}

#[pyfunction]
fn stable_pdf(beta: f64, s: f64) -> PyResult<f64> {
    stable::stable_pdf(order(beta)?, s).map_err(err)
}

#[pyfunction]
fn inverse_pdf(beta: f64, s: f64, t: f64) -> PyResult<f64> {
    stable::inverse_pdf(order(beta)?, s, t).map_err(err)
}

fn series(values: Vec<f64>, dt: f64) -> PyResult<TimeSeries> {
    TimeSeries::new(0.0, dt, values).map_err(err)
}

/// L1 Caputo derivative of samples on `0, dt, 2 dt, ...`; values at `dt, 2 dt, ...`.
#[pyfunction]
fn caputo(values: Vec<f64>, dt: f64, beta: f64) -> PyResult<Vec<f64>> {
    Ok(caputo_l1(&series(values, dt)?, order(beta)?).map_err(err)?.values)
}

/// Riemann-Liouville derivative of order `alpha`; values at `dt, 2 dt, ...`.
#[pyfunction]
fn riemann_liouville(values: Vec<f64>, dt: f64, alpha: f64) -> PyResult<Vec<f64>> {
    Ok(rl_derivative(&series(values, dt)?, order(alpha)?).map_err(err)?.values)
}

/// Riemann-Liouville integral of order `alpha`.
#[pyfunction]
fn integral(values: Vec<f64>, dt: f64, alpha: f64) -> PyResult<Vec<f64>> {
    Ok(fractional_integral(&series(values, dt)?, order(alpha)?).map_err(err)?.values)
}

/// One-dimensional discrete conjugate `f*(p) = max_v (p v - f(v))` on `dual`.
#[pyfunction]
fn legendre(points: Vec<f64>, values: Vec<f64>, dual: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = hopflax_core::GridFunction::new(Grid::new(vec![points]).map_err(err)?, values).map_err(err)?;
    let conj = legendre_transform(&f, &Grid::new(vec![dual]).map_err(err)?).map_err(err)?;
    Ok(conj.function.values().to_vec())
}

#[pyclass(name = "QuotientModel", frozen)]
struct PyQuotientModel {
    inner: hopflax_core::QuotientModel,
}

#[pymethods]
impl PyQuotientModel {
    /// Identity quotient on `n` uniform points of `[lo, hi]`.
    #[staticmethod]
    fn identity(lo: f64, hi: f64, n: usize) -> PyResult<Self> {
        let inner = hopflax_core::QuotientModel::identity_interval(lo, hi, n).map_err(err)?;
        Ok(Self { inner })
    }

    /// Hyperplane fibers in `R^ambient_dim` over `n` points of `[lo, hi]`.
    /// With `sine` and `linear` the section is
    /// `(y + sine sin y, -sine sin y, linear y, -linear y, ...)`.
    #[staticmethod]
    #[pyo3(signature = (ambient_dim, lo, hi, n, sine=None, linear=None))]
    fn hyperplane(
        ambient_dim: usize,
        lo: f64,
        hi: f64,
        n: usize,
        sine: Option<f64>,
        linear: Option<f64>,
    ) -> PyResult<Self> {
        let section = match (sine, linear) {
            (None, None) => HyperplaneSection::Canonical,
            (s, l) => HyperplaneSection::Paired {
                sine: s.unwrap_or(0.0),
                linear: l.unwrap_or(0.0),
            },
        };
        let inner = hopflax_core::QuotientModel::hyperplane(ambient_dim, (lo, hi), n, section).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn base_points(&self) -> Vec<Vec<f64>> {
        self.inner.base_points().to_vec()
    }

    #[getter]
    fn section(&self) -> Vec<Vec<f64>> {
        self.inner.section().to_vec()
    }

    /// Obstacle `g = max_j f_j` at each base point.
    #[getter]
    fn g(&self) -> Vec<f64> {
        self.inner.g_values().to_vec()
    }

    /// `K = max d(f(y1), fiber(y2))`.
    fn k(&self) -> PyResult<f64> {
        estimate_k(&self.inner).map_err(err)
    }

    /// Intrinsic Lipschitz constant of the section.
    fn ell(&self) -> PyResult<f64> {
        estimate_intrinsic_lipschitz(&self.inner).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }
}

#[pyclass(name = "LagrangianPair", frozen)]
struct PyLagrangianPair {
    inner: hopflax_core::LagrangianPair,
}

#[pymethods]
impl PyLagrangianPair {
    /// `L(v) = |v|^2 / 2` with constant `c`.
    #[staticmethod]
    #[pyo3(signature = (c, half_width=5.0, points=101))]
    fn quadratic(c: f64, half_width: f64, points: usize) -> PyResult<Self> {
        let inner = hopflax_core::LagrangianPair::quadratic(half_width, points, c).map_err(err)?;
        Ok(Self { inner })
    }

    /// One-dimensional tabulated `L`; `H` is computed on `dual`.
    #[staticmethod]
    fn tabulated(points: Vec<f64>, values: Vec<f64>, dual: Vec<f64>, c: f64) -> PyResult<Self> {
        let l = hopflax_core::GridFunction::new(Grid::new(vec![points]).map_err(err)?, values).map_err(err)?;
        let inner =
            hopflax_core::LagrangianPair::from_lagrangian(l, &Grid::new(vec![dual]).map_err(err)?, c).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.constant()
    }

    fn lagrangian(&self, v: Vec<f64>) -> f64 {
        self.inner.eval(&v)
    }

    /// Tabulated Hamiltonian as `(points, values)` for one-dimensional tables.
    fn hamiltonian_table(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let h = self.inner.hamiltonian();
        (h.grid().points(), h.values().to_vec())
    }
}

#[pyclass(name = "ValueField", frozen)]
struct PyValueField {
    inner: hopflax_core::ValueField,
    csv: String,
}

#[pymethods]
impl PyValueField {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    /// Base point index of each row.
    #[getter]
    fn rows(&self) -> Vec<usize> {
        self.inner.rows.clone()
    }

    #[getter]
    fn g(&self) -> Vec<f64> {
        self.inner.g.clone()
    }

    /// `u[row][time]`.
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        self.inner.u.chunks(self.inner.times.len()).map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn stderr(&self) -> Vec<Vec<f64>> {
        self.inner.stderr.chunks(self.inner.times.len()).map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn acceptance_rates(&self) -> Vec<f64> {
        self.inner.acceptance_rates()
    }

    fn to_csv(&self) -> String {
        self.csv.clone()
    }
}

/// Monte Carlo estimate of `u` on every base point and time.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (model, pair, beta, times, n_paths=100_000, seed=0, condition_et_ge_1=false))]
fn evaluate(
    py: Python<'_>,
    model: &PyQuotientModel,
    pair: &PyLagrangianPair,
    beta: f64,
    times: Vec<f64>,
    n_paths: usize,
    seed: u64,
    condition_et_ge_1: bool,
) -> PyResult<PyValueField> {
    let b = order(beta)?;
    let mut cfg = EvaluationConfig::new(n_paths, seed, times);
    cfg.condition_et_ge_1 = condition_et_ge_1;
    let (m, p) = (&model.inner, &pair.inner);
    let inner = py.detach(|| evaluate_u(m, p, b, &cfg)).map_err(err)?;
    let csv = inner.to_csv(m);
    Ok(PyValueField { inner, csv })
}

/// Runs a CLI configuration (JSON text) in memory. Returns whether it
/// passed and the artifacts by file name.
#[pyfunction]
fn run(py: Python<'_>, config_json: &str) -> PyResult<(bool, BTreeMap<String, String>)> {
    let cfg = RunConfig::from_json(config_json).map_err(err)?;
    let outcome = py.detach(|| execute(&cfg)).map_err(err)?;
    let files = outcome
        .artifacts
        .names()
        .map(|n| {
            let text = String::from_utf8_lossy(outcome.artifacts.get(n).unwrap_or_default()).into_owned();
            (n.to_string(), text)
        })
        .collect();
    Ok((outcome.passed, files))
}

/// JSON text of a shipped preset (`identity-quadratic` or `hyperplane-k4`)
/// for the given command.
#[pyfunction]
fn preset(name: &str, command: &str) -> PyResult<String> {
    use clap::ValueEnum;
    let p = hopflax_core::cli::Preset::from_str(name, true).map_err(PyValueError::new_err)?;
    let c = hopflax_core::cli::Command::from_str(command, true).map_err(PyValueError::new_err)?;
    Ok(RunConfig::preset(p, c).to_value().to_string())
}

#[pymodule]
fn hopflax(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sample_stable, m)?)?;
    m.add_function(wrap_pyfunction!(sample_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_moment, m)?)?;
    m.add_function(wrap_pyfunction!(stable_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(caputo, m)?)?;
    m.add_function(wrap_pyfunction!(riemann_liouville, m)?)?;
    m.add_function(wrap_pyfunction!(integral, m)?)?;
    m.add_function(wrap_pyfunction!(legendre, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_class::<PyQuotientModel>()?;
    m.add_class::<PyLagrangianPair>()?;
    m.add_class::<PyValueField>()?;
    Ok(())
}
