//! Python bindings: Gaussian-mixture fields, the main bound checks and CSV sweeps.

use heat_sampling::calibration::CalibrationTable;
use heat_sampling::corpus;
use heat_sampling::error::Error;
use heat_sampling::gaussian_field::{GaussianMixtureField, GaussianTerm};
use heat_sampling::hs_analysis::hs_residual_gaussian;
use heat_sampling::observability;
use heat_sampling::perturbation::PerturbationRule;
use heat_sampling::report::BoundReport;
use heat_sampling::runner::{self, ExperimentConfig};
use heat_sampling::weak_window::{self, GrowthFunction, WindowedExperiment};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Certification { .. } | Error::Calibration(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A finite sum of heat kernels `a (4πs)^{-d/2} exp(-|x-c|²/4s)`.
#[pyclass(name = "GaussianField", module = "heat_sampling_py", frozen)]
#[derive(Clone)]
struct PyField {
    inner: GaussianMixtureField,
}

#[pymethods]
impl PyField {
    /// `terms` is a list of `(amplitude, center, width)` tuples.
    #[new]
    fn new(dim: usize, terms: Vec<(f64, Vec<f64>, f64)>) -> PyResult<Self> {
        let terms = terms.into_iter().map(|(a, c, s)| GaussianTerm::new(a, c, s)).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
        Ok(Self { inner: GaussianMixtureField::new(dim, terms).map_err(to_py)? })
    }

    /// One of the standard shapes: unit, narrow, wide, pair, triple.
    #[staticmethod]
    fn shape(name: &str, dim: usize) -> PyResult<Self> {
        corpus::shape(name, dim)
            .map(|inner| Self { inner })
            .ok_or_else(|| PyValueError::new_err(format!("unknown shape `{name}`; expected one of {:?}", corpus::SHAPE_NAMES)))
    }

    #[staticmethod]
    fn from_record(text: &str) -> PyResult<Self> {
        Ok(Self { inner: GaussianMixtureField::from_record(text).map_err(to_py)? })
    }

    fn to_record(&self) -> String {
        self.inner.to_record()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.evaluate(&x).map_err(to_py)
    }

    fn fourier(&self, xi: Vec<f64>) -> PyResult<Complex64> {
        self.inner.fourier_at(&xi).map_err(to_py)
    }

    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm()
    }

    fn heat_evolve(&self, t: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.heat_evolve(t).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("GaussianField(dim={}, terms={})", self.inner.dim(), self.inner.terms().len())
    }
}

fn report_dict<'py>(py: Python<'py>, r: &BoundReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("bound", &r.bound)?;
    d.set_item("measured", r.measured)?;
    d.set_item("certificate", r.certificate)?;
    d.set_item("bound_form", r.bound_form)?;
    d.set_item("constant", r.constant)?;
    d.set_item("bound_rhs", r.bound_rhs)?;
    d.set_item("ratio", r.ratio)?;
    d.set_item("asserted", r.asserted)?;
    d.set_item("holds", r.holds())?;
    d.set_item("fingerprint", r.fingerprint.clone())?;
    d.set_item("params", r.params.clone())?;
    d.set_item("labels", r.labels.clone())?;
    d.set_item("extras", r.extras.clone())?;
    Ok(d)
}

/// Applies the built-in calibration table when it has a matching constant.
fn finish<'py>(py: Python<'py>, d: usize, r: heat_sampling::error::Result<BoundReport>) -> PyResult<Bound<'py, PyDict>> {
    let r = CalibrationTable::embedded().apply(d, r.map_err(to_py)?);
    report_dict(py, &r)
}

/// Lattice reconstruction residual of `e^{TΔ}u0` at density `n`.
#[pyfunction]
#[pyo3(signature = (field, t, n, tol = 1e-6))]
fn residual<'py>(py: Python<'py>, field: &PyField, t: f64, n: f64, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    finish(py, field.inner.dim(), py.allow_threads(|| observability::residual(&field.inner, t, n, tol)))
}

/// Residual with sample nodes moved by at most `eps/N` under the named rule.
#[pyfunction]
#[pyo3(signature = (field, t, n, eps, rule = "alternating", seed = 0, tol = 1e-6))]
#[allow(clippy::too_many_arguments)]
fn perturbed_residual<'py>(py: Python<'py>, field: &PyField, t: f64, n: f64, eps: f64, rule: &str, seed: u64, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let rule = PerturbationRule::named(rule, eps, seed).map_err(to_py)?;
    finish(py, field.inner.dim(), py.allow_threads(|| observability::perturbed_residual(&field.inner, t, n, &rule, tol)))
}

/// Reconstruction from samples inside the ball of radius `r`, in the `(1+|x|)^k` weighted norm.
#[pyfunction]
#[pyo3(signature = (field, t, n, r, k = 1, tol = 1e-6))]
fn windowed_residual<'py>(py: Python<'py>, field: &PyField, t: f64, n: f64, r: f64, k: u32, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let exp = WindowedExperiment { u0: field.inner.clone(), t, n, r, k };
    finish(py, field.inner.dim(), py.allow_threads(|| weak_window::windowed_residual(&exp, tol)))
}

/// Lower bound showing that windows growing like `growth` (e.g. `"constant:1"`) are too small.
#[pyfunction]
fn counterexample_gap<'py>(py: Python<'py>, dim: usize, t: f64, n: f64, growth: &str) -> PyResult<Bound<'py, PyDict>> {
    let g: GrowthFunction = growth.parse().map_err(to_py)?;
    finish(py, dim, weak_window::counterexample_gap(dim, t, n, g))
}

/// Residual measured in `H^s` for integer `s > d/2`.
#[pyfunction]
fn hs_residual<'py>(py: Python<'py>, field: &PyField, t: f64, n: f64, s: u32) -> PyResult<Bound<'py, PyDict>> {
    let ut = field.inner.heat_evolve(t).map_err(to_py)?;
    finish(py, ut.dim(), py.allow_threads(|| hs_residual_gaussian(&ut, n, s)))
}

/// Runs a sweep described by a TOML config and returns `(csv_text, exit_code)`.
#[pyfunction]
fn run_sweep(py: Python<'_>, config: &str) -> PyResult<(String, i32)> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    let rows = py.allow_threads(|| runner::with_jobs(cfg.jobs, || runner::run(&cfg))).map_err(to_py)?.map_err(to_py)?;
    let mut buf = Vec::new();
    runner::write_csv(&rows, &mut buf).map_err(to_py)?;
    let text = String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((text, runner::exit_code(&rows)))
}

#[pymodule]
fn heat_sampling_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(perturbed_residual, m)?)?;
    m.add_function(wrap_pyfunction!(windowed_residual, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample_gap, m)?)?;
    m.add_function(wrap_pyfunction!(hs_residual, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
