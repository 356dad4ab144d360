//! Python bindings: datasets, priors, sampler runs, reports, the exact
//! oracle, simulation studies and black-box linearization.

use codeval::harness::{run_scenario, scenario_defaults};
use codeval::linearize::{linearize as linearize_box, to_linear_code, FnBlackBox, OlsOptions, ParamBox};
use codeval::model::{simulate_m0, simulate_m1, unit_grid};
use codeval::oracle::oracle_report;
use codeval::report::ValidationReport;
use codeval::sampler::{run_chain, McmcConfig as CoreMcmc, PosteriorDraws as CoreDraws};
use codeval::{BackendKind, Dataset as CoreDataset, LinearCode as CoreCode, PriorConfig as CorePriors};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: codeval::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// JSON text to the equivalent Python object.
fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

/// Observations on the unit hypercube.
#[pyclass(name = "Dataset", module = "codeval", from_py_object)]
#[derive(Clone)]
pub struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    /// `x` is a list of floats (one input) or a list of rows.
    #[new]
    fn new(x: &Bound<'_, PyAny>, y: Vec<f64>) -> PyResult<Self> {
        let rows: Vec<Vec<f64>> = match x.extract::<Vec<f64>>() {
            Ok(col) => col.into_iter().map(|v| vec![v]).collect(),
            Err(_) => x.extract()?,
        };
        let d = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(PyValueError::new_err("input rows have different lengths"));
        }
        let flat: Vec<f64> = rows.concat();
        let xm = DMatrix::from_row_slice(rows.len(), d, &flat);
        Ok(Dataset { inner: CoreDataset::new(xm, DVector::from_vec(y)).map_err(to_py)? })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let f = std::fs::File::open(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        Ok(Dataset { inner: CoreDataset::read_csv(f).map_err(to_py)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n()).map(|i| self.inner.x_row(i)).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, d={})", self.inner.n(), self.inner.d())
    }
}

/// The code `f(x, θ) = g(x)·θ`.
#[pyclass(name = "LinearCode", module = "codeval", from_py_object)]
#[derive(Clone)]
pub struct LinearCode {
    inner: CoreCode,
}

#[pymethods]
impl LinearCode {
    #[staticmethod]
    fn polynomial(degree: usize) -> Self {
        LinearCode { inner: CoreCode::polynomial(degree) }
    }

    #[staticmethod]
    fn polynomial_multi(degrees: Vec<usize>) -> Self {
        LinearCode { inner: CoreCode::polynomial_multi(degrees) }
    }

    /// One design row per observation.
    #[staticmethod]
    fn tabulated(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err("design rows have different lengths"));
        }
        let g = DMatrix::from_row_slice(rows.len(), p, &rows.concat());
        Ok(LinearCode { inner: CoreCode::tabulated(&g).map_err(to_py)? })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    fn __repr__(&self) -> String {
        format!("LinearCode(p={})", self.inner.p())
    }
}

#[pyclass(name = "PriorConfig", module = "codeval", from_py_object)]
#[derive(Clone)]
pub struct PriorConfig {
    inner: CorePriors,
}

#[pymethods]
impl PriorConfig {
    #[new]
    #[pyo3(signature = (a0=0.5, k_prior=(1.0, 1.0), gamma_prior=(1.0, 1.0), mu_delta=0.0))]
    fn new(a0: f64, k_prior: (f64, f64), gamma_prior: (f64, f64), mu_delta: f64) -> PyResult<Self> {
        let inner = CorePriors { a0, k_prior, gamma_prior, mu_delta };
        inner.validate().map_err(to_py)?;
        Ok(PriorConfig { inner })
    }

    #[getter]
    fn a0(&self) -> f64 {
        self.inner.a0
    }

    #[getter]
    fn k_prior(&self) -> (f64, f64) {
        self.inner.k_prior
    }

    #[getter]
    fn gamma_prior(&self) -> (f64, f64) {
        self.inner.gamma_prior
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "McmcConfig", module = "codeval", from_py_object)]
#[derive(Clone)]
pub struct McmcConfig {
    inner: CoreMcmc,
}

#[pymethods]
impl McmcConfig {
    #[new]
    #[pyo3(signature = (iters=10_000, burn_in=1_000, seed=0, thin=1, target_accept=0.44, backend="auto", random_init=false))]
    fn new(
        iters: usize,
        burn_in: usize,
        seed: u64,
        thin: usize,
        target_accept: f64,
        backend: &str,
        random_init: bool,
    ) -> PyResult<Self> {
        let backend: BackendKind = backend.parse().map_err(to_py)?;
        let inner = CoreMcmc { iters, burn_in, seed, thin, target_accept, backend, random_init, ..Default::default() };
        inner.validate().map_err(to_py)?;
        Ok(McmcConfig { inner })
    }

    #[getter]
    fn iters(&self) -> usize {
        self.inner.iters
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Post-burn-in sampler states.
#[pyclass(name = "PosteriorDraws", module = "codeval", from_py_object)]
#[derive(Clone)]
pub struct PosteriorDraws {
    inner: CoreDraws,
}

#[pymethods]
impl PosteriorDraws {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Trace of one scalar: alpha, lambda, k, gamma, m, theta_j or delta_i
    /// (1-based indices).
    fn trace(&self, name: &str) -> PyResult<Vec<f64>> {
        let indexed = |prefix: &str| name.strip_prefix(prefix).and_then(|j| j.parse::<usize>().ok()).filter(|&j| j >= 1);
        let states = &self.inner.states;
        let out = match name {
            "alpha" => self.inner.column(|s| s.alpha),
            "lambda" => self.inner.column(|s| s.lambda),
            "k" => self.inner.column(|s| s.k),
            "gamma" => self.inner.column(|s| s.gamma),
            "m" => self.inner.column(|s| s.m() as f64),
            _ => match (indexed("theta_"), indexed("delta_")) {
                (Some(j), _) if states.first().is_some_and(|s| j <= s.theta.len()) => {
                    self.inner.column(|s| s.theta[j - 1])
                }
                (_, Some(i)) if states.first().is_some_and(|s| i <= s.delta.len()) => {
                    self.inner.column(|s| s.delta[i - 1])
                }
                _ => return Err(PyValueError::new_err(format!("unknown quantity '{name}'"))),
            },
        };
        Ok(out)
    }

    fn mean(&self, name: &str) -> PyResult<f64> {
        let t = self.trace(name)?;
        Ok(t.iter().sum::<f64>() / t.len().max(1) as f64)
    }

    #[getter]
    fn accept_k(&self) -> f64 {
        self.inner.accept_k
    }

    #[getter]
    fn accept_gamma(&self) -> f64 {
        self.inner.accept_gamma
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        self.inner.write_csv(std::io::BufWriter::new(f)).map_err(to_py)
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let f = std::fs::File::open(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        Ok(PosteriorDraws { inner: CoreDraws::read_csv(f).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("PosteriorDraws(len={})", self.inner.len())
    }
}

/// Runs the sampler with the GIL released.
#[pyfunction]
#[pyo3(signature = (data, code, priors=None, mcmc=None))]
fn fit(
    py: Python<'_>,
    data: &Dataset,
    code: &LinearCode,
    priors: Option<&PriorConfig>,
    mcmc: Option<&McmcConfig>,
) -> PyResult<PosteriorDraws> {
    let priors = priors.map(|p| p.inner).unwrap_or_default();
    let cfg = mcmc.map(|m| m.inner.clone()).unwrap_or_default();
    let (d, c) = (&data.inner, &code.inner);
    let draws = py.detach(|| run_chain(d, c, priors, &cfg)).map_err(to_py)?;
    Ok(PosteriorDraws { inner: draws })
}

/// Validation report as a dict: bias probabilities, summaries, predictions.
#[pyfunction]
fn report<'py>(
    py: Python<'py>,
    draws: &PosteriorDraws,
    data: &Dataset,
    code: &LinearCode,
) -> PyResult<Bound<'py, PyAny>> {
    let r = ValidationReport::build(&draws.inner, &data.inner, &code.inner).map_err(to_py)?;
    json_to_py(py, &r.to_json().map_err(to_py)?)
}

/// Exact posterior mean of α and log marginal likelihood (n ≤ 12).
#[pyfunction]
#[pyo3(signature = (data, code, priors=None, resolution=32))]
fn oracle<'py>(
    py: Python<'py>,
    data: &Dataset,
    code: &LinearCode,
    priors: Option<&PriorConfig>,
    resolution: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let priors = priors.map(|p| p.inner).unwrap_or_default();
    let (d, c) = (&data.inner, &code.inner);
    let r = py.detach(|| oracle_report(d, c, &priors, resolution)).map_err(to_py)?;
    json(py, &r)
}

/// Polynomial data on the grid `i/n`; returns the dataset and the true
/// discrepancy (zeros for the pure model).
#[pyfunction]
#[pyo3(signature = (model, n, seed=1, theta=vec![4.0, 1.0, 2.0], lambda_=0.1, k=0.1, gamma=0.3))]
fn simulate(
    model: &str,
    n: usize,
    seed: u64,
    theta: Vec<f64>,
    lambda_: f64,
    k: f64,
    gamma: f64,
) -> PyResult<(Dataset, Vec<f64>)> {
    if theta.is_empty() || n == 0 {
        return Err(PyValueError::new_err("need n >= 1 and at least one coefficient"));
    }
    let code = CoreCode::polynomial(theta.len() - 1);
    let x = unit_grid(n);
    let (y, delta) = match model {
        "m0" => (simulate_m0(&code, &theta, lambda_, &x, seed).map_err(to_py)?, vec![0.0; n]),
        "m1" => simulate_m1(&code, &theta, lambda_, k, gamma, &x, seed).map_err(to_py)?,
        other => return Err(PyValueError::new_err(format!("model must be 'm0' or 'm1', got '{other}'"))),
    };
    let inner = CoreDataset::new(x, DVector::from_vec(y)).map_err(to_py)?;
    Ok((Dataset { inner }, delta))
}

/// Named simulation study; returns the per-replicate rows and failures.
#[pyfunction]
#[pyo3(signature = (name, replicates=None, iters=None, burn_in=None, jobs=1))]
fn experiment<'py>(
    py: Python<'py>,
    name: &str,
    replicates: Option<usize>,
    iters: Option<usize>,
    burn_in: Option<usize>,
    jobs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mut s = scenario_defaults(name).map_err(to_py)?;
    if let Some(r) = replicates {
        s.replicates = r;
    }
    if let Some(i) = iters {
        s.mcmc.iters = i;
    }
    if let Some(b) = burn_in {
        s.mcmc.burn_in = b;
    }
    s.validate().map_err(to_py)?;
    let table = py.detach(|| run_scenario(&s, jobs)).map_err(to_py)?;
    json(py, &table)
}

/// Linearizes a Python callable `f(params) -> outputs` around its
/// least-squares fit to `observations`. Returns the surrogate as a dict and
/// the regression form `(LinearCode, response)`.
#[pyfunction]
#[pyo3(signature = (func, lower, upper, observations, fit=None, restarts=5, max_evals=20_000))]
#[allow(clippy::too_many_arguments)]
fn linearize<'py>(
    py: Python<'py>,
    func: Py<PyAny>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    observations: Vec<f64>,
    fit: Option<Vec<usize>>,
    restarts: usize,
    max_evals: usize,
) -> PyResult<(Bound<'py, PyAny>, LinearCode, Vec<f64>)> {
    let bx = ParamBox::new(lower, upper).map_err(to_py)?;
    let dim = bx.dim();
    let failure: std::sync::Mutex<Option<PyErr>> = std::sync::Mutex::new(None);
    let bb = FnBlackBox::new(dim, |k: &[f64]| {
        Python::attach(|py| match func.call1(py, (k.to_vec(),)).and_then(|v| v.extract::<Vec<f64>>(py)) {
            Ok(v) => v,
            Err(e) => {
                failure.lock().expect("lock").get_or_insert(e);
                vec![f64::NAN; observations.len()]
            }
        })
    });
    let opts = OlsOptions { restarts, max_evals, ..Default::default() };
    let result = py.detach(|| linearize_box(&bb, &bx, &observations, &opts, None));
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    let (sur, _) = result.map_err(to_py)?;
    let fit = fit.unwrap_or_else(|| (0..dim).collect());
    let (code, response) = to_linear_code(&sur, &fit, &observations).map_err(to_py)?;
    Ok((json(py, &sur)?, LinearCode { inner: code }, response))
}

#[pymodule]
#[pyo3(name = "codeval")]
fn codeval_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_class::<LinearCode>()?;
    m.add_class::<PriorConfig>()?;
    m.add_class::<McmcConfig>()?;
    m.add_class::<PosteriorDraws>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    m.add_function(wrap_pyfunction!(linearize, m)?)?;
    Ok(())
}
