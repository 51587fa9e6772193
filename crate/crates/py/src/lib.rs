//! Python bindings: gains, small-gain checks, the comparison function, the
//! pendulum benchmark and the randomized suites.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use issf_core::comparison::beta as core_beta;
use issf_core::gain_algebra::{check_small_gain, default_small_gain_grid};
use issf_core::gains::{invert, DEFAULT_INVERT_TOL};
use issf_core::pendulum::{qp_filter as core_qp_filter, run_scenario as core_run_scenario};
use issf_core::suites::run_suite as core_run_suite;
use issf_core::{BenchmarkResult, GainExpr, GainFn, ScenarioConfig, SubsystemGains};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Extended class K-infinity gain.
#[pyclass(name = "Gain", frozen, from_py_object)]
#[derive(Clone)]
struct PyGain(GainFn);

#[pymethods]
impl PyGain {
    #[staticmethod]
    fn linear(slope: f64) -> PyResult<Self> {
        GainFn::linear(slope).map(Self).map_err(value_err)
    }

    /// Piecewise-linear gain from `(s, g(s))` knots; must include `(0, 0)`.
    #[staticmethod]
    fn pwl(knots: Vec<(f64, f64)>) -> PyResult<Self> {
        GainFn::piecewise_linear(knots).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn zero() -> Self {
        Self(GainFn::zero())
    }

    /// Parses `{"kind": "linear", "slope": 2.0}`-style JSON.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: issf_core::GainSpec = text.parse().map_err(value_err)?;
        spec.build().map(Self).map_err(value_err)
    }

    fn __call__(&self, s: f64) -> PyResult<f64> {
        self.0.eval(s).map_err(value_err)
    }

    #[pyo3(signature = (y, tol = DEFAULT_INVERT_TOL))]
    fn inverse(&self, y: f64, tol: f64) -> PyResult<f64> {
        invert(&GainExpr::leaf(self.0.clone()), y, tol).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Gain({})", self.0.name())
    }
}

/// Result of the sampled small-gain test.
#[pyclass(name = "SmallGainReport", frozen, get_all)]
struct PySmallGainReport {
    grid: Vec<f64>,
    ratios: Vec<f64>,
    max_ratio: f64,
    passed: bool,
    closed_form_ratio: Option<f64>,
    caveats: Vec<String>,
    table: String,
}

fn subsystem(alphas: Vec<PyGain>, phi: PyGain, gamma: PyGain, sigma: PyGain) -> PyResult<SubsystemGains> {
    SubsystemGains::new(alphas.into_iter().map(|g| g.0).collect(), phi.0, gamma.0, sigma.0).map_err(value_err)
}

/// Small-gain test for two subsystems given as `(alphas, phi, gamma)`
/// triples sharing `sigma`.
#[pyfunction]
#[pyo3(signature = (first, second, sigma, grid = None))]
fn small_gain(
    first: (Vec<PyGain>, PyGain, PyGain),
    second: (Vec<PyGain>, PyGain, PyGain),
    sigma: PyGain,
    grid: Option<Vec<f64>>,
) -> PyResult<PySmallGainReport> {
    let g1 = subsystem(first.0, first.1, first.2, sigma.clone())?;
    let g2 = subsystem(second.0, second.1, second.2, sigma)?;
    let grid = grid.unwrap_or_else(default_small_gain_grid);
    let r = check_small_gain(&g1, &g2, &grid);
    Ok(PySmallGainReport {
        table: r.to_string(),
        grid: r.grid,
        ratios: r.ratios,
        max_ratio: r.max_ratio,
        passed: r.pass,
        closed_form_ratio: r.closed_form_ratio,
        caveats: r.caveats,
    })
}

/// `β(s, t)`: flow of `ẏ = -α(y)` from `s` after time `t`.
#[pyfunction]
#[pyo3(signature = (alpha, s, t, dt = 1e-3))]
fn beta(alpha: &PyGain, s: f64, t: f64, dt: f64) -> PyResult<f64> {
    core_beta(&alpha.0, s, t, dt).map_err(value_err)
}

#[pyfunction]
fn qp_filter(u_hat: f64, psi1: f64, psi0: f64) -> PyResult<f64> {
    core_qp_filter(u_hat, psi1, psi0).map_err(value_err)
}

/// Benchmark scenario configuration.
#[pyclass(name = "ScenarioConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenarioConfig(ScenarioConfig);

#[pymethods]
impl PyScenarioConfig {
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml_str(toml).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn safe_init() -> Self {
        Self(ScenarioConfig::safe_init())
    }

    #[staticmethod]
    fn unsafe_init() -> Self {
        Self(ScenarioConfig::unsafe_init())
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        ScenarioConfig::load(&path).map(Self).map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml_string()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.0.t_end
    }
}

/// Outcome of one benchmark run.
#[pyclass(name = "BenchmarkResult", frozen)]
struct PyBenchmarkResult(BenchmarkResult);

#[pymethods]
impl PyBenchmarkResult {
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.0.trajectory.t.clone()
    }

    /// State component `i` over time (`θ₁, θ̇₁, θ₂, θ̇₂`).
    fn state(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= 4 {
            return Err(value_err(format!("state index {i} out of range")));
        }
        Ok(self.0.trajectory.component(i))
    }

    #[getter]
    fn h(&self) -> (Vec<f64>, Vec<f64>) {
        (self.0.h[0].clone(), self.0.h[1].clone())
    }

    #[getter]
    fn u_nominal(&self) -> (Vec<f64>, Vec<f64>) {
        (self.0.u_nominal[0].clone(), self.0.u_nominal[1].clone())
    }

    #[getter]
    fn u_filtered(&self) -> (Vec<f64>, Vec<f64>) {
        (self.0.u_filtered[0].clone(), self.0.u_filtered[1].clone())
    }

    #[getter]
    fn min_h(&self) -> (f64, f64) {
        (self.0.min_h[0], self.0.min_h[1])
    }

    #[getter]
    fn entry_time(&self) -> (Option<f64>, Option<f64>) {
        (self.0.entry_time[0], self.0.entry_time[1])
    }

    #[getter]
    fn min_barrier_residual(&self) -> (f64, f64) {
        (self.0.min_barrier_residual[0], self.0.min_barrier_residual[1])
    }

    #[getter]
    fn max_tracking_error(&self) -> (f64, f64) {
        (self.0.tracking[0].max_error, self.0.tracking[1].max_error)
    }

    #[getter]
    fn small_gain_ratio(&self) -> f64 {
        self.0.small_gain.max_ratio
    }

    #[getter]
    fn safe(&self) -> bool {
        self.0.all_safe()
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    fn report(&self) -> String {
        self.0.report()
    }
}

#[pyfunction]
fn run_scenario(py: Python<'_>, config: &PyScenarioConfig) -> PyResult<PyBenchmarkResult> {
    let cfg = config.0.clone();
    py.detach(move || core_run_scenario(&cfg))
        .map(PyBenchmarkResult)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs a named randomized suite; returns `(passed, instances, failed, text)`.
#[pyfunction]
#[pyo3(signature = (name, seed = 0))]
fn run_suite(py: Python<'_>, name: String, seed: u64) -> PyResult<(bool, usize, usize, String)> {
    let out = py.detach(move || core_run_suite(&name, seed)).map_err(value_err)?;
    Ok((out.passed(), out.instances, out.failed, out.to_string()))
}

#[pymodule]
fn issf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGain>()?;
    m.add_class::<PySmallGainReport>()?;
    m.add_class::<PyScenarioConfig>()?;
    m.add_class::<PyBenchmarkResult>()?;
    m.add_function(wrap_pyfunction!(small_gain, m)?)?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(qp_filter, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
