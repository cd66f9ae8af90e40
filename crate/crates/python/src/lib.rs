//! Python bindings.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use szbov_core::action;
use szbov_core::dynamics::{self, VerifyOptions};
use szbov_core::fields::{FieldConfig, FieldsBlock};
use szbov_core::geometry;
use szbov_core::gradcheck::{self, GradCheckOptions};
use szbov_core::loopspace::{self, DiscreteLoop};
use szbov_core::solver::{self, OrbitRecord, SeedSpec, SolveOptions};
use szbov_core::Error;

create_exception!(szbov, SzbovError, PyException);
create_exception!(szbov, ValidationError, SzbovError);
create_exception!(szbov, NoConvergenceError, SzbovError);

fn err(e: Error) -> PyErr {
    match e {
        Error::NoConvergence { .. } | Error::Degenerated(_) | Error::Continuation { .. } => {
            NoConvergenceError::new_err(e.to_string())
        }
        Error::InvalidLoop(_)
        | Error::InvalidFields(_)
        | Error::InvalidOptions(_)
        | Error::FieldValidation(_)
        | Error::DegenerateLoop { .. } => ValidationError::new_err(e.to_string()),
        _ => SzbovError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    ValidationError::new_err(e.to_string())
}

#[pyfunction]
fn birkhoff_map(z: Complex64) -> PyResult<Complex64> {
    geometry::birkhoff_map(z).map_err(err)
}

#[pyfunction]
fn conformal_weight(z: Complex64) -> PyResult<f64> {
    geometry::conformal_weight(z).map_err(err)
}

#[pyfunction]
fn involution(z: Complex64) -> PyResult<Complex64> {
    geometry::involution(z).map_err(err)
}

/// A sampled loop in the z-plane.
#[pyclass(name = "Loop", module = "szbov", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLoop(DiscreteLoop);

#[pymethods]
impl PyLoop {
    #[new]
    #[pyo3(signature = (samples, twisted = false))]
    fn new(samples: Vec<Complex64>, twisted: bool) -> PyResult<Self> {
        DiscreteLoop::new(samples, twisted).map(Self).map_err(err)
    }

    #[staticmethod]
    fn circle(n: usize, center: Complex64, radius: f64) -> PyResult<Self> {
        loopspace::circle(n, center, radius).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    #[getter]
    fn samples(&self) -> Vec<Complex64> {
        self.0.samples().to_vec()
    }

    #[getter]
    fn twisted(&self) -> bool {
        self.0.is_twisted()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn zhat(&self) -> PyResult<f64> {
        self.0.zhat().map_err(err)
    }

    fn involuted(&self) -> Self {
        Self(self.0.involuted())
    }

    fn resample(&self, n: usize) -> PyResult<Self> {
        self.0.resample(n).map(Self).map_err(err)
    }

    fn birkhoff_image(&self) -> Vec<Complex64> {
        self.0.birkhoff_image()
    }

    /// Physical samples `q(j/m)` and collision times.
    fn reconstruct(&self, m: usize) -> PyResult<(Vec<Complex64>, Vec<f64>)> {
        let q = self.0.reconstruct(m).map_err(err)?;
        Ok((q.samples().to_vec(), q.collision_times().to_vec()))
    }

    fn __len__(&self) -> usize {
        self.0.n()
    }

    fn __repr__(&self) -> String {
        format!("Loop(n={}, twisted={})", self.0.n(), self.0.is_twisted())
    }
}

/// Field configuration built from preset names.
#[pyclass(name = "Fields", module = "szbov", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFields(FieldConfig);

#[pymethods]
impl PyFields {
    #[new]
    #[pyo3(signature = (mu = 0.0, magnetic = "zero", magnetic_params = vec![], electric = "zero", electric_params = vec![]))]
    fn new(
        mu: f64,
        magnetic: &str,
        magnetic_params: Vec<f64>,
        electric: &str,
        electric_params: Vec<f64>,
    ) -> PyResult<Self> {
        FieldConfig::preset(mu, (magnetic, &magnetic_params), (electric, &electric_params))
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let block: FieldsBlock = serde_json::from_str(text).map_err(json_err)?;
        FieldConfig::try_from(block).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        let block = self.0.to_block().map_err(err)?;
        serde_json::to_string(&block).map_err(json_err)
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }

    /// True when the gauge, periodicity and derivative checks pass.
    fn validate(&self) -> bool {
        self.0.validate().passed()
    }

    fn __repr__(&self) -> String {
        self.to_json().unwrap_or_else(|_| "Fields(custom)".into())
    }
}

/// A critical point (or best iterate) with its diagnostics.
#[pyclass(name = "Orbit", module = "szbov", frozen)]
struct PyOrbit(OrbitRecord);

#[pymethods]
impl PyOrbit {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        OrbitRecord::from_json(text).map(Self).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn action(&self) -> f64 {
        self.0.action()
    }

    #[getter(C)]
    fn c(&self) -> f64 {
        self.0.c
    }

    #[getter]
    fn grad_norm(&self) -> f64 {
        self.0.grad_norm
    }

    #[getter]
    fn delay_sup(&self) -> f64 {
        self.0.delay_sup
    }

    #[getter]
    fn phi_sup(&self) -> f64 {
        self.0.phi_sup
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    #[getter]
    fn twisted(&self) -> bool {
        self.0.twisted
    }

    #[getter(r#loop)]
    fn z(&self) -> PyLoop {
        PyLoop(self.0.z.clone())
    }

    #[getter]
    fn fields(&self) -> PyFields {
        PyFields(self.0.cfg.clone())
    }

    #[getter]
    fn q(&self) -> Vec<Complex64> {
        self.0.q.samples().to_vec()
    }

    #[getter]
    fn collision_times(&self) -> Vec<f64> {
        self.0.q.collision_times().to_vec()
    }

    /// `(around −1, around +1)`, or `None` for collision orbits.
    #[getter]
    fn winding(&self) -> Option<(i64, i64)> {
        self.0.winding.map(|w| (w.around_minus_one, w.around_plus_one))
    }

    #[getter]
    fn components<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        breakdown_dict(py, &self.0.breakdown)
    }

    #[pyo3(signature = (tol = 1e-5))]
    fn verify<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let opts = VerifyOptions {
            tol,
            ..Default::default()
        };
        let rep = dynamics::verify_generalized(&self.0, &self.0.cfg, &opts).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("collision_count", rep.collision_count)?;
        d.set_item("finite_collisions", rep.finite_collisions)?;
        d.set_item("newton_defect", rep.newton_defect)?;
        d.set_item("energy_jump", rep.energy_jump)?;
        d.set_item("closure", rep.closure)?;
        d.set_item("passed", rep.passed)?;
        Ok(d)
    }

    /// Sup distance between the samples and a re-integration from `q(0)`.
    #[pyo3(signature = (tol = 1e-10))]
    fn reintegration_error(&self, tol: f64) -> PyResult<f64> {
        dynamics::reintegrate(&self.0.q, &self.0.cfg, tol).map(|(_, e)| e).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Orbit(action={}, grad_norm={:e}, iterations={}, twisted={})",
            self.0.action(),
            self.0.grad_norm,
            self.0.iterations,
            self.0.twisted
        )
    }
}

fn breakdown_dict<'py>(py: Python<'py>, b: &action::ActionBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in [
        ("F", b.f),
        ("G", b.g),
        ("H1", b.h1),
        ("H2", b.h2),
        ("M", b.m),
        ("E", b.e_val),
        ("E1", b.e1),
        ("total", b.total),
        ("C", b.c()),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

#[pyfunction]
fn eval_components<'py>(py: Python<'py>, z: &PyLoop, fields: &PyFields) -> PyResult<Bound<'py, PyDict>> {
    let b = action::eval_components(&z.0, &fields.0).map_err(err)?;
    breakdown_dict(py, &b)
}

#[pyfunction]
fn eval_action(z: &PyLoop, fields: &PyFields) -> PyResult<f64> {
    action::eval_action(&z.0, &fields.0).map_err(err)
}

#[pyfunction]
fn gradient(z: &PyLoop, fields: &PyFields) -> PyResult<Vec<Complex64>> {
    action::gradient(&z.0, &fields.0).map_err(err)
}

/// `circle:CX,CY,R`, `ellipse:A,B`, `kepler:SIDE,R`, `collision:SIDE,REACH`
/// or `file:PATH`.
#[pyfunction]
#[pyo3(signature = (spec, n = 128))]
fn seed(spec: &str, n: usize) -> PyResult<PyLoop> {
    let spec: SeedSpec = spec.parse().map_err(err)?;
    solver::seed(&spec, n).map(PyLoop).map_err(err)
}

fn options(json: Option<&str>, g_tol: Option<f64>, max_iterations: Option<usize>) -> PyResult<SolveOptions> {
    let mut o: SolveOptions = match json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => SolveOptions::default(),
    };
    if let Some(t) = g_tol {
        o.g_tol = t;
    }
    if let Some(m) = max_iterations {
        o.max_iterations = m;
    }
    Ok(o)
}

#[pyfunction]
#[pyo3(signature = (seed, fields, options_json = None, g_tol = None, max_iterations = None))]
fn solve(
    py: Python<'_>,
    seed: &PyLoop,
    fields: &PyFields,
    options_json: Option<&str>,
    g_tol: Option<f64>,
    max_iterations: Option<usize>,
) -> PyResult<PyOrbit> {
    let opts = options(options_json, g_tol, max_iterations)?;
    let (z, cfg) = (seed.0.clone(), fields.0.clone());
    py.detach(move || solver::solve(&z, &cfg, &opts)).map(PyOrbit).map_err(err)
}

/// Returns the converged records (start first) and the failure message, if any.
#[pyfunction]
#[pyo3(signature = (start, path, options_json = None))]
fn continue_family(
    py: Python<'_>,
    start: &PyOrbit,
    path: Vec<PyRef<'_, PyFields>>,
    options_json: Option<&str>,
) -> PyResult<(Vec<PyOrbit>, Option<String>)> {
    let opts = options(options_json, None, None)?;
    let cfgs: Vec<FieldConfig> = path.iter().map(|f| f.0.clone()).collect();
    let start = start.0.clone();
    let fam = py
        .detach(move || solver::continue_family(&start, &cfgs, &opts))
        .map_err(err)?;
    let failure = fam.failure.map(|(step, _, e)| format!("step {step}: {e}"));
    Ok((fam.records.into_iter().map(PyOrbit).collect(), failure))
}

type Sampled = (Vec<f64>, Vec<Complex64>, Vec<Complex64>, String);

/// Integrates Newton's equations; returns `(times, positions, velocities, status)`.
#[pyfunction]
#[pyo3(signature = (q0, v0, t0, t1, fields, tol = 1e-10))]
fn integrate(
    q0: Complex64,
    v0: Complex64,
    t0: f64,
    t1: f64,
    fields: &PyFields,
    tol: f64,
) -> PyResult<Sampled> {
    let tr = dynamics::integrate(q0, v0, t0, t1, &fields.0, tol).map_err(err)?;
    let status = serde_json::to_value(tr.terminated)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    Ok((tr.times, tr.positions, tr.velocities, status))
}

/// Gradient check over the preset grid; returns `(passed, max_error, worst)`.
#[pyfunction]
#[pyo3(signature = (n = 64, loops = 2, twisted = false, mu = 0.3))]
fn grad_check(n: usize, loops: usize, twisted: bool, mu: f64) -> PyResult<(bool, f64, String)> {
    let opts = GradCheckOptions {
        n,
        loops,
        twisted,
        ..Default::default()
    };
    let rep = gradcheck::run(&gradcheck::preset_grid(mu).map_err(err)?, &opts, None).map_err(err)?;
    Ok((rep.passed, rep.max_error, rep.worst))
}

#[pymodule]
fn szbov(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("SzbovError", py.get_type::<SzbovError>())?;
    m.add("ValidationError", py.get_type::<ValidationError>())?;
    m.add("NoConvergenceError", py.get_type::<NoConvergenceError>())?;
    m.add_class::<PyLoop>()?;
    m.add_class::<PyFields>()?;
    m.add_class::<PyOrbit>()?;
    m.add_function(wrap_pyfunction!(birkhoff_map, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_weight, m)?)?;
    m.add_function(wrap_pyfunction!(involution, m)?)?;
    m.add_function(wrap_pyfunction!(eval_components, m)?)?;
    m.add_function(wrap_pyfunction!(eval_action, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(seed, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(continue_family, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
