//! Python bindings for `fcl-core`.
//!
//! Structured results (metric reports, scan results, minimizers) are returned
//! as plain Python dicts and lists; `LossSpec` and `PredictionSet` are wrapped
//! as classes.

use fcl_core::calibrate::{self, TemperatureGrid};
use fcl_core::data::{self, SyntheticConfig};
use fcl_core::losses::{self, LossFamily};
use fcl_core::metrics::{self, BinScheme, BinningConfig, CwNorm};
use fcl_core::theory::{self, SigmaSpec};
use fcl_core::train::{self as trainer, MLPConfig, ModelState};
use fcl_core::{CalibError, ProbVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py_err(e: CalibError) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn check<T>(r: fcl_core::Result<T>) -> PyResult<T> {
    r.map_err(to_py_err)
}

/// Serializes through JSON so nested results arrive as dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn binning(bins: usize, scheme: &str) -> PyResult<BinningConfig> {
    let scheme: BinScheme = check(scheme.parse())?;
    Ok(BinningConfig { bins, scheme })
}

/// Loss family and hyperparameters.
#[pyclass(name = "LossSpec", module = "fclpy", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyLossSpec {
    inner: losses::LossSpec,
}

#[pymethods]
impl PyLossSpec {
    #[new]
    #[pyo3(signature = (family, gamma = 0.0, lam = 0.0, alpha = 0.0))]
    fn new(family: &str, gamma: f64, lam: f64, alpha: f64) -> PyResult<Self> {
        let family: LossFamily = check(family.parse())?;
        Ok(Self { inner: check(losses::LossSpec::from_parts(family, gamma, lam, alpha))? })
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family.to_string()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    fn is_convex(&self) -> bool {
        self.inner.is_convex()
    }

    fn __repr__(&self) -> String {
        format!(
            "LossSpec(family='{}', gamma={}, lam={}, alpha={})",
            self.inner.family, self.inner.gamma, self.inner.lambda, self.inner.alpha
        )
    }
}

/// Validated set of predictions with integer labels.
#[pyclass(name = "PredictionSet", module = "fclpy", frozen, skip_from_py_object)]
pub struct PyPredictionSet {
    inner: data::PredictionSet,
}

#[pymethods]
impl PyPredictionSet {
    #[staticmethod]
    fn from_probs(probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: check(data::PredictionSet::from_probs(probs, &labels))? })
    }

    #[staticmethod]
    fn from_logits(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: check(data::PredictionSet::from_logits(logits, &labels))? })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    fn probs(&self) -> Vec<Vec<f64>> {
        self.inner.records().iter().map(|r| r.probs.as_slice().to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PredictionSet(n={}, k={})", self.inner.len(), self.inner.k())
    }
}

/// Loss of one prediction against a target distribution.
#[pyfunction]
fn eval_loss(spec: &PyLossSpec, probs: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    let p = check(ProbVector::new(probs))?;
    let t = check(ProbVector::new(target))?;
    check(losses::eval_loss(&spec.inner, &p, &t))
}

/// Loss and its gradient with respect to the logits.
#[pyfunction]
fn eval_loss_grad(spec: &PyLossSpec, logits: Vec<f64>, target: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let t = check(ProbVector::new(target))?;
    let r = check(losses::eval_loss_grad(&spec.inner, &logits, &t))?;
    Ok((r.value, r.grad_logits))
}

#[pyfunction]
#[pyo3(signature = (set, bins = 15, scheme = "equal_width"))]
fn ece(set: &PyPredictionSet, bins: usize, scheme: &str) -> PyResult<f64> {
    check(metrics::ece(&set.inner, &binning(bins, scheme)?))
}

/// Full metric report as a dict.
#[pyfunction]
#[pyo3(signature = (set, bins = 15, scheme = "equal_width", cwece_norm = "global"))]
fn metric_report<'py>(
    py: Python<'py>,
    set: &PyPredictionSet,
    bins: usize,
    scheme: &str,
    cwece_norm: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let norm: CwNorm = check(cwece_norm.parse())?;
    let report = check(metrics::metric_report(&set.inner, &binning(bins, scheme)?, norm))?;
    to_py(py, &report)
}

/// Reliability table as a list of bin dicts.
#[pyfunction]
#[pyo3(signature = (set, bins = 15, scheme = "equal_width"))]
fn reliability<'py>(
    py: Python<'py>,
    set: &PyPredictionSet,
    bins: usize,
    scheme: &str,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &check(metrics::reliability_table(&set.inner, &binning(bins, scheme)?))?)
}

#[pyfunction]
fn smce<'py>(py: Python<'py>, set: &PyPredictionSet) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &check(metrics::smce(&set.inner))?)
}

#[pyfunction]
fn auroc(pos: Vec<f64>, neg: Vec<f64>) -> PyResult<f64> {
    check(metrics::auroc(&pos, &neg))
}

#[pyfunction]
fn apply_temperature(set: &PyPredictionSet, t: f64) -> PyResult<PyPredictionSet> {
    Ok(PyPredictionSet { inner: check(calibrate::apply_temperature(&set.inner, t))? })
}

#[pyfunction]
#[pyo3(signature = (val, bins = 15, t_min = 0.1, t_max = 10.0, t_step = 0.1))]
fn temperature_scan<'py>(
    py: Python<'py>,
    val: &PyPredictionSet,
    bins: usize,
    t_min: f64,
    t_max: f64,
    t_step: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = TemperatureGrid { t_min, t_max, t_step };
    to_py(py, &check(calibrate::temperature_scan(&val.inner, &BinningConfig::equal_width(bins), &grid))?)
}

#[pyfunction]
fn pgap<'py>(py: Python<'py>, set: &PyPredictionSet, spec: &PyLossSpec) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &check(calibrate::pgap(&set.inner, &spec.inner))?)
}

#[pyfunction]
fn minimize_risk<'py>(py: Python<'py>, spec: &PyLossSpec, eta: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let eta = check(ProbVector::new(eta))?;
    to_py(py, &check(theory::minimize_risk(&spec.inner, &eta))?)
}

#[pyfunction]
fn sigma_root(gamma: f64, lam: f64) -> PyResult<f64> {
    check(theory::sigma_root(&check(SigmaSpec::new(gamma, lam))?))
}

/// `(q, p_hat_star)` pairs on the grid `0, step, ..., 1`.
#[pyfunction]
#[pyo3(signature = (spec, step = 0.01))]
fn optimal_curve(spec: &PyLossSpec, step: f64) -> PyResult<Vec<(f64, f64)>> {
    check(theory::optimal_curve(&spec.inner, &check(theory::curve_grid(step))?))
}

/// Two-moons points as `(x0, x1, label)` tuples.
#[pyfunction]
#[pyo3(signature = (n = 1000, noise = 0.2, seed = 1))]
fn gen_moons(n: usize, noise: f64, seed: u64) -> PyResult<Vec<(f64, f64, usize)>> {
    let pts = check(data::gen_moons(&SyntheticConfig::moons(n, noise, seed)))?;
    Ok(pts.iter().map(|p| (p.x[0], p.x[1], p.label)).collect())
}

/// Trains the default MLP on `(x0, x1, label)` points split 60/20/20 and
/// returns the model as JSON together with the per-epoch history.
#[pyfunction]
#[pyo3(signature = (points, spec, epochs = 500, seed = 1, lr = 1e-3))]
fn train<'py>(
    py: Python<'py>,
    points: Vec<(f64, f64, usize)>,
    spec: &PyLossSpec,
    epochs: usize,
    seed: u64,
    lr: f64,
) -> PyResult<(String, Bound<'py, PyAny>)> {
    let pts: Vec<data::LabeledPoint> = points
        .into_iter()
        .map(|(x0, x1, label)| data::LabeledPoint { x: [x0, x1], label, eta: None })
        .collect();
    let (tr, _val, test) = trainer::split_points(&pts, seed);
    let cfg = MLPConfig { epochs, seed, lr, ..MLPConfig::default() };
    let out = check(trainer::train(&cfg, &spec.inner, &tr, &test))?;
    Ok((check(out.model.to_json())?, to_py(py, &out.history)?))
}

/// Class probabilities of a JSON model at the given points.
#[pyfunction]
fn predict(model_json: &str, points: Vec<(f64, f64)>) -> PyResult<Vec<Vec<f64>>> {
    let model = check(ModelState::from_json(model_json))?;
    Ok(points.iter().map(|&(x0, x1)| model.predict([x0, x1])).collect())
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLossSpec>()?;
    m.add_class::<PyPredictionSet>()?;
    m.add_function(wrap_pyfunction!(eval_loss, m)?)?;
    m.add_function(wrap_pyfunction!(eval_loss_grad, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(metric_report, m)?)?;
    m.add_function(wrap_pyfunction!(reliability, m)?)?;
    m.add_function(wrap_pyfunction!(smce, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(apply_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_scan, m)?)?;
    m.add_function(wrap_pyfunction!(pgap, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_risk, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_root, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_curve, m)?)?;
    m.add_function(wrap_pyfunction!(gen_moons, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    Ok(())
}

#[pymodule]
fn fclpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
