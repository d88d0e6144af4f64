//! Python bindings for the swept solver.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use swept_core::kernels::{Equation, Method};
use swept_core::{ClockMode, CostModel, Decomposition, LaunchConfig, RunOptions};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A validated launch configuration.
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: LaunchConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (
        equation, method, n, ranks = 2, w = 32, wf = 0, steps = 50, mode = "virtual",
        alpha = 5e-6, beta = 1e-10, unit_cost = 1e-8, fo = 0.4, gamma = 1.4, cfl = 0.4
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        equation: &str,
        method: &str,
        n: usize,
        ranks: usize,
        w: usize,
        wf: usize,
        steps: u64,
        mode: &str,
        alpha: f64,
        beta: f64,
        unit_cost: f64,
        fo: f64,
        gamma: f64,
        cfl: f64,
    ) -> PyResult<Self> {
        let equation: Equation = equation.parse().map_err(value_error)?;
        let method: Method = method.parse().map_err(value_error)?;
        let mut inner = LaunchConfig::new(equation, method, n, ranks, w, wf, steps).map_err(value_error)?;
        inner.mode = mode.parse::<ClockMode>().map_err(value_error)?;
        inner.cost = CostModel {
            latency: alpha,
            inverse_bandwidth: beta,
            compute_cost: unit_cost,
        };
        inner.rederive_phys(fo, gamma, cfl).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.grid_size
    }

    #[getter]
    fn ranks(&self) -> usize {
        self.inner.ranks
    }

    #[getter]
    fn w(&self) -> usize {
        self.inner.block_width
    }

    #[getter]
    fn wf(&self) -> usize {
        self.inner.work_factor
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.steps
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.phys.dt
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.phys.dx
    }

    /// Substeps the kernel performs per time step.
    #[getter]
    fn substeps_per_step(&self) -> u64 {
        self.inner.spec.substeps_per_step as u64
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config({}, {}, n={}, ranks={}, w={}, wf={}, steps={})",
            c.spec.equation, c.spec.method, c.grid_size, c.ranks, c.block_width, c.work_factor, c.steps
        )
    }
}

/// Outcome of one run.
#[pyclass(name = "RunResult", frozen, get_all)]
struct PyRunResult {
    scheme: String,
    /// Observable values flattened point by point.
    field: Vec<f64>,
    field_width: usize,
    substep: u64,
    messages: u64,
    bytes: u64,
    rounds: u64,
    kernel_calls: u64,
    virtual_time: f64,
    elapsed_s: f64,
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult({}, substep={}, rounds={}, messages={}, virtual_time={:e})",
            self.scheme, self.substep, self.rounds, self.messages, self.virtual_time
        )
    }
}

/// Comparison of swept, classic and serial fields.
#[pyclass(name = "VerifyReport", frozen, get_all)]
struct PyVerifyReport {
    bitwise: bool,
    max_abs_diff: f64,
    max_rel_diff: f64,
}

#[pymethods]
impl PyVerifyReport {
    fn __repr__(&self) -> String {
        format!(
            "VerifyReport(bitwise={}, max_abs_diff={:e})",
            self.bitwise, self.max_abs_diff
        )
    }
}

fn decomposition(scheme: &str) -> PyResult<Decomposition> {
    scheme.parse().map_err(value_error)
}

/// Runs `config` with the given scheme: "swept", "classic" or "serial".
#[pyfunction]
#[pyo3(signature = (config, scheme = "swept", inject_ulp = None))]
fn solve(py: Python<'_>, config: &PyConfig, scheme: &str, inject_ulp: Option<usize>) -> PyResult<PyRunResult> {
    let d = decomposition(scheme)?;
    let cfg = config.inner.clone();
    let opts = RunOptions {
        inject_ulp,
        ..RunOptions::default()
    };
    let s = py
        .detach(|| swept_core::solve(&cfg, d, &opts))
        .map_err(runtime_error)?;
    Ok(PyRunResult {
        scheme: d.to_string(),
        field: s.field,
        field_width: s.field_width,
        substep: s.substep,
        messages: s.stats.messages_sent,
        bytes: s.stats.bytes_sent,
        rounds: s.stats.exchange_rounds,
        kernel_calls: s.kernel_calls,
        virtual_time: s.virtual_time,
        elapsed_s: s.elapsed.as_secs_f64(),
    })
}

/// Runs all three schemes and compares their final fields bit for bit.
#[pyfunction]
#[pyo3(signature = (config, inject_ulp = None))]
fn verify(py: Python<'_>, config: &PyConfig, inject_ulp: Option<usize>) -> PyResult<PyVerifyReport> {
    let cfg = config.inner.clone();
    let opts = RunOptions {
        inject_ulp,
        ..RunOptions::default()
    };
    let r = py
        .detach(|| swept_core::verify(&cfg, &opts))
        .map_err(runtime_error)?;
    Ok(PyVerifyReport {
        bitwise: r.bitwise(),
        max_abs_diff: r.max_abs_diff,
        max_rel_diff: r.max_rel_diff,
    })
}

/// Exchange rounds the scheme is predicted to perform.
#[pyfunction]
#[pyo3(signature = (config, scheme = "swept"))]
fn expected_rounds(config: &PyConfig, scheme: &str) -> PyResult<u64> {
    swept_core::expected_rounds(&config.inner, decomposition(scheme)?).map_err(runtime_error)
}

/// Least-squares fit of `y = A * x**b`; returns `(A, b, r_squared)`.
#[pyfunction]
fn power_law_fit(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let fit = swept_core::power_law_fit(&points).map_err(value_error)?;
    Ok((fit.a, fit.b, fit.r_squared))
}

#[pymodule]
fn swept(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyVerifyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(expected_rounds, m)?)?;
    m.add_function(wrap_pyfunction!(power_law_fit, m)?)?;
    Ok(())
}
