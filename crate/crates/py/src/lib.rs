//! Python bindings: `import invman`.

use std::path::PathBuf;

use ::invman::admissibility::{self, LipschitzEnvelope, QuadratureConfig};
use ::invman::bounds::BoundFamily as CoreBounds;
use ::invman::demos;
use ::invman::functions::ScalarFn;
use ::invman::linear_system::LinearSystem as CoreSystem;
use ::invman::manifold::ManifoldGraph;
use ::invman::scenario::{self, ScenarioConfig};
use ::invman::Error;
use nalgebra::DVector;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(invman, InvmanError, PyException, "Any failure reported by the invman core.");

fn err(e: Error) -> PyErr {
    InvmanError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    InvmanError::new_err(format!("config error: {e}"))
}

/// Python object → serde value through the `json` module.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(json_err)
}

/// serde value → plain Python dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A linear equation `v' = A(t) v` with a constant splitting.
#[pyclass(module = "invman", frozen)]
struct LinearSystem {
    inner: CoreSystem,
}

#[pymethods]
impl LinearSystem {
    /// The planar product example; each argument is a dict like `{"scale": 1.0, "rate": 1.0}`.
    #[staticmethod]
    fn product(frak_a: &Bound<'_, PyAny>, frak_b: &Bound<'_, PyAny>, frak_c: &Bound<'_, PyAny>, frak_d: &Bound<'_, PyAny>) -> PyResult<Self> {
        let f = |o: &Bound<'_, PyAny>| from_py::<ScalarFn>(o);
        let inner = CoreSystem::build_product_example(f(frak_a)?, f(frak_b)?, f(frak_c)?, f(frak_d)?).map_err(err)?;
        Ok(LinearSystem { inner })
    }

    /// The product example that matches a bound family's product form.
    #[staticmethod]
    fn matched(bounds: &BoundFamily) -> PyResult<Self> {
        let pf = bounds.inner.as_product_form().ok_or_else(|| InvmanError::new_err("these bounds have no product form"))?;
        let inner = CoreSystem::build_product_example(pf.frak_a, pf.frak_b, pf.frak_c, pf.frak_d).map_err(err)?;
        Ok(LinearSystem { inner })
    }

    /// `A(t) = diag(rates)` with the first `dim_e` coordinates spanning `E`.
    #[staticmethod]
    fn diagonal(rates: Vec<f64>, dim_e: usize) -> PyResult<Self> {
        Ok(LinearSystem { inner: CoreSystem::diagonal(rates, dim_e, Default::default()).map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn dim_e(&self) -> usize {
        self.inner.splitting().dim_e()
    }

    /// `T_{t,s} v`.
    fn evolve(&self, t: f64, s: f64, v: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.evolve(t, s, &DVector::from_vec(v)).map_err(err)?.as_slice().to_vec())
    }

    /// `T_{t,s}` as a list of rows.
    fn transition(&self, t: f64, s: f64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.transition(t, s).map_err(err)?;
        Ok((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("LinearSystem(dim={}, dim_e={})", self.inner.dim(), self.inner.splitting().dim_e())
    }
}

/// Dichotomy bounds `a(t,s)`, `b(t,s)`.
#[pyclass(module = "invman", frozen)]
struct BoundFamily {
    inner: CoreBounds,
}

#[pymethods]
impl BoundFamily {
    /// From a dict such as `{"kind": "exponential", "d": 1, "a": -1, "b": 0, "eps": 0.1}`.
    #[new]
    fn new(spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner: CoreBounds = from_py(spec)?;
        inner.validate().map_err(err)?;
        Ok(BoundFamily { inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn eval_a(&self, t: f64, s: f64) -> PyResult<f64> {
        self.inner.eval_a(t, s).map_err(err)
    }

    fn eval_b(&self, t: f64, s: f64) -> PyResult<f64> {
        self.inner.eval_b(t, s).map_err(err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("BoundFamily({})", self.inner.name())
    }
}

fn quad_config(quadrature: Option<&Bound<'_, PyAny>>) -> PyResult<QuadratureConfig> {
    quadrature.map(from_py).transpose().map(Option::unwrap_or_default)
}

/// `(value, error)` of α for a Lipschitz envelope dict such as `{"kind": "exp_decay", "delta": 0.01, "rate": 0.2}`.
#[pyfunction]
#[pyo3(signature = (bounds, envelope, quadrature=None))]
fn compute_alpha(bounds: &BoundFamily, envelope: &Bound<'_, PyAny>, quadrature: Option<&Bound<'_, PyAny>>) -> PyResult<(f64, f64)> {
    let env: LipschitzEnvelope = from_py(envelope)?;
    let e = admissibility::compute_alpha(&bounds.inner, &env, &quad_config(quadrature)?).map_err(err)?;
    Ok((e.value, e.error))
}

/// `(value, error)` of β.
#[pyfunction]
#[pyo3(signature = (bounds, envelope, quadrature=None))]
fn compute_beta(bounds: &BoundFamily, envelope: &Bound<'_, PyAny>, quadrature: Option<&Bound<'_, PyAny>>) -> PyResult<(f64, f64)> {
    let env: LipschitzEnvelope = from_py(envelope)?;
    let e = admissibility::compute_beta(&bounds.inner, &env, &quad_config(quadrature)?).map_err(err)?;
    Ok((e.value, e.error))
}

/// `(passed, margin)` of `2α + max{2β, √β} < 1`.
#[pyfunction]
fn global_gate(alpha: f64, beta: f64) -> (bool, f64) {
    let g = admissibility::check_global_gate(alpha, beta);
    (g.passed, g.margin)
}

/// `(passed, margin)` of `4α + max{4β, √(2β)} < 1`.
#[pyfunction]
fn local_gate(alpha: f64, beta: f64) -> (bool, f64) {
    let g = admissibility::check_local_gate(alpha, beta);
    (g.passed, g.margin)
}

/// A solved invariant graph `φ(s, ξ)`.
#[pyclass(module = "invman", frozen)]
struct Manifold {
    inner: ManifoldGraph,
}

#[pymethods]
impl Manifold {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Manifold { inner: ManifoldGraph::from_json(text).map_err(err)? })
    }

    /// `φ(s, ξ)` by interpolation inside the grid.
    fn eval(&self, s: f64, xi: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.eval(s, &DVector::from_vec(xi)).map_err(err)?.as_slice().to_vec())
    }

    /// Time nodes of the reported range.
    #[getter]
    fn s_grid(&self) -> Vec<f64> {
        self.inner.s_grid[..self.inner.active_len].to_vec()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn error_bound(&self) -> f64 {
        self.inner.error_bound
    }

    #[getter]
    fn outer_iterations(&self) -> usize {
        self.inner.outer_iterations
    }

    fn lipschitz_constants(&self) -> Vec<f64> {
        self.inner.lipschitz_constants()
    }

    fn zero_at_origin(&self) -> bool {
        self.inner.zero_at_origin()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!("Manifold(nodes={}, xi_nodes={}, error_bound={:e})", g.active_len, g.n_xi(), g.error_bound)
    }
}

/// A scenario: system, bounds, perturbation and all numerical settings.
#[pyclass(module = "invman", frozen)]
struct Scenario {
    inner: scenario::Scenario,
}

fn build(cfg: ScenarioConfig) -> PyResult<Scenario> {
    Ok(Scenario { inner: scenario::Scenario::from_config(cfg).map_err(err)? })
}

#[pymethods]
impl Scenario {
    /// From TOML or JSON text, with optional `key.path=value` overrides.
    #[staticmethod]
    #[pyo3(signature = (text, overrides=Vec::new()))]
    fn parse(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        build(ScenarioConfig::parse_with(text, &overrides, None).map_err(err)?)
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides=Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        build(ScenarioConfig::load(&path, &overrides).map_err(err)?)
    }

    /// From a dict with the same layout as the config files.
    #[staticmethod]
    fn from_dict(spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let cfg: ScenarioConfig = from_py(spec)?;
        cfg.validate().map_err(err)?;
        build(cfg)
    }

    /// The configuration of a named demo.
    #[staticmethod]
    #[pyo3(signature = (name, overrides=Vec::new()))]
    fn demo(name: &str, overrides: Vec<String>) -> PyResult<Self> {
        build(demos::demo_config(name).and_then(|c| c.with_overrides(&overrides)).map_err(err)?)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn system(&self) -> LinearSystem {
        LinearSystem { inner: self.inner.system.clone() }
    }

    #[getter]
    fn bounds(&self) -> BoundFamily {
        BoundFamily { inner: self.inner.bounds.clone() }
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Admissibility report as a dict; writes `admissibility.json` into `out` when given.
    #[pyo3(signature = (out=None))]
    fn check<'py>(&self, py: Python<'py>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let c = py.detach(|| scenario::run_check(&self.inner, out.as_deref())).map_err(err)?;
        to_py(py, &c)
    }

    /// `(exit_code, manifold or None)`; writes the manifold files into `out` when given.
    #[pyo3(signature = (out=None))]
    fn solve(&self, py: Python<'_>, out: Option<PathBuf>) -> PyResult<(i32, Option<Manifold>)> {
        let s = py.detach(|| scenario::run_solve(&self.inner, out.as_deref())).map_err(err)?;
        Ok((s.status.code(), s.solution.map(|sol| Manifold { inner: sol.graph })))
    }

    /// Verification report as a dict; writes `verification.json` into `out` when given.
    #[pyo3(signature = (manifold, out=None))]
    fn verify<'py>(&self, py: Python<'py>, manifold: &Manifold, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let v = py.detach(|| scenario::verify_graph(&self.inner, &manifold.inner, out.as_deref())).map_err(err)?;
        to_py(py, &v)
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, bounds={})", self.inner.name(), self.inner.bounds.name())
    }
}

/// Runs a named demo end to end; returns its summary dict (with `exit_code`).
#[pyfunction]
#[pyo3(signature = (name, out=None, overrides=Vec::new()))]
fn run_demo<'py>(py: Python<'py>, name: &str, out: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let d = py.detach(|| demos::run_demo(name, &overrides, out.as_deref())).map_err(err)?;
    to_py(py, &d.summary)
}

#[pymodule]
#[pyo3(name = "invman")]
fn invman_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("InvmanError", m.py().get_type::<InvmanError>())?;
    m.add("DEMO_NAMES", demos::DEMO_NAMES.to_vec())?;
    m.add_class::<LinearSystem>()?;
    m.add_class::<BoundFamily>()?;
    m.add_class::<Manifold>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(compute_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(compute_beta, m)?)?;
    m.add_function(wrap_pyfunction!(global_gate, m)?)?;
    m.add_function(wrap_pyfunction!(local_gate, m)?)?;
    m.add_function(wrap_pyfunction!(run_demo, m)?)?;
    Ok(())
}
