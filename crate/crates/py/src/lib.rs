//! Python bindings: problem parameters, the stiffness operator, fibering,
//! thresholds, the solvers and the experiment runner. Structured results
//! come back as plain dicts.

use fracnehari::experiment::{self, ExperimentConfig};
use fracnehari::fibering::{fibering_report, thresholds};
use fracnehari::functional::energy;
use fracnehari::solver::{minimize_on_nehari, residual_norm, Branch, SolverConfig};
use fracnehari::{assemble_stiffness, Error, Mesh, StiffnessOperator};
use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match experiment::exit_code(&err) {
        2 => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "ProblemParams", module = "fracnehari", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: fracnehari::ProblemParams,
}

#[pymethods]
impl PyParams {
    /// `p=None` selects the critical exponent `2* - 1`.
    #[new]
    #[pyo3(signature = (s, q, mu, p=None, lam=1.0, a=-1.0, b=1.0))]
    fn new(s: f64, q: f64, mu: f64, p: Option<f64>, lam: f64, a: f64, b: f64) -> PyResult<Self> {
        let mut inner = fracnehari::ProblemParams::critical(s, q, mu, a, b);
        inner.lambda = lam;
        if let Some(p) = p {
            inner.p = p;
        }
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.s
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.q
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    fn two_star(&self) -> f64 {
        self.inner.two_star()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("ProblemParams(s={}, q={}, p={}, mu={}, lam={})", p.s, p.q, p.p, p.mu, p.lambda)
    }
}

#[pyclass(name = "Operator", module = "fracnehari")]
struct PyOperator {
    inner: StiffnessOperator,
}

impl PyOperator {
    fn coeffs(&self, u: Vec<f64>) -> PyResult<DVector<f64>> {
        if u.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!("expected {} coefficients, got {}", self.inner.dim(), u.len())));
        }
        Ok(DVector::from_vec(u))
    }
}

#[pymethods]
impl PyOperator {
    /// Stiffness operator on a uniform mesh with `n` interior nodes.
    #[new]
    #[pyo3(signature = (params, n, quad_order=4))]
    fn new(params: &PyParams, n: usize, quad_order: usize) -> PyResult<Self> {
        let d = params.inner.domain;
        let mesh = Mesh::uniform(d.a, d.b, n, quad_order).map_err(to_py)?;
        Ok(Self { inner: assemble_stiffness(&mesh, &params.inner).map_err(to_py)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn nodes(&self) -> Vec<f64> {
        self.inner.mesh().interior_nodes().to_vec()
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.inner.matrix();
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    fn apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.apply(&self.coeffs(u)?).iter().copied().collect())
    }

    /// Energy breakdown of the function with nodal values `u`.
    fn energy<'py>(&self, py: Python<'py>, u: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let f = self.inner.function(self.coeffs(u)?).map_err(to_py)?;
        to_dict(py, &energy(&self.inner, &f, self.inner.params()).map_err(to_py)?)
    }

    /// Dual norm of the energy derivative at `u`.
    fn residual_norm(&self, u: Vec<f64>) -> PyResult<f64> {
        let f = self.inner.function(self.coeffs(u)?).map_err(to_py)?;
        residual_norm(&self.inner, &f, self.inner.params()).map_err(to_py)
    }

    fn fibering<'py>(&self, py: Python<'py>, u: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let f = self.inner.function(self.coeffs(u)?).map_err(to_py)?;
        to_dict(py, &fibering_report(&f, &self.inner, self.inner.params()).map_err(to_py)?)
    }

    /// Minimize on the Nehari branch `"n_plus"` or `"n_minus"`.
    #[pyo3(signature = (branch, residual_tol=1e-10, max_iters=2000))]
    fn solve_positive<'py>(
        &self,
        py: Python<'py>,
        branch: &str,
        residual_tol: f64,
        max_iters: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let branch = match branch {
            "n_plus" => Branch::NPlus,
            "n_minus" => Branch::NMinus,
            other => return Err(PyValueError::new_err(format!("unknown branch '{other}'"))),
        };
        let cfg = SolverConfig { residual_tol, max_iters, keep_trace: false, ..Default::default() };
        let rec = minimize_on_nehari(&self.inner, self.inner.params(), branch, None, &cfg).map_err(to_py)?;
        to_dict(py, &rec)
    }
}

#[pyfunction]
fn threshold_constants<'py>(py: Python<'py>, params: &PyParams, s_estimate: f64) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &thresholds(&params.inner, s_estimate).map_err(to_py)?)
}

/// Run an experiment from TOML text; returns `{artifact name: contents}`.
#[pyfunction]
fn run_experiment(config: &str) -> PyResult<Vec<(String, String)>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let outs = experiment::run(&cfg).map_err(to_py)?;
    Ok(outs
        .names()
        .into_iter()
        .map(|n| (n.to_string(), outs.get(n).unwrap_or_default().to_string()))
        .collect())
}

#[pyfunction]
fn describe() -> String {
    experiment::describe()
}

#[pymodule]
fn fracnehari_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(threshold_constants, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    Ok(())
}
