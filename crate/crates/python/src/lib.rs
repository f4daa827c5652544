//! Python bindings: plant, dataset, surrogate, certificate, controller and closed loop.
//!
//! Structured results (bounds, terminal ingredients, traces) cross the boundary
//! as plain dicts built from their JSON form.

use kedmd_mpc::padua::{build_observation_grid, degree_for_grid_size, padua_count};
use kedmd_mpc::sim::decrease_violations;
use kedmd_mpc::tightening::{cbar, max_horizon_box_rule};
use kedmd_mpc::{
    bounds, build_cluster_dataset, design_terminal, fit_control_affine, run_closed_loop, trace_metrics, AxisBox,
    BoundsConfig, CertifiedBounds, ClusterDataset, Dynamics, KernelSpec, ModelDocument, MpcConfig,
    MpcController, SolverSettings, SurrogateModel, TerminalConfig, VanDerPol,
};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: kedmd_mpc::Error) -> PyErr {
    match e {
        kedmd_mpc::Error::Io(_) | kedmd_mpc::Error::Json(_) | kedmd_mpc::Error::Csv(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Euler-discretized controlled van der Pol oscillator.
#[pyclass(name = "VanDerPol", module = "kedmd", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVanDerPol {
    inner: VanDerPol,
}

#[pymethods]
impl PyVanDerPol {
    #[new]
    #[pyo3(signature = (dt=0.05, nu=0.1))]
    fn new(dt: f64, nu: f64) -> Self {
        PyVanDerPol { inner: VanDerPol { dt, nu, ..VanDerPol::default() } }
    }

    fn step(&self, x: [f64; 2], u: f64) -> Vec<f64> {
        self.inner.step(&x, &[u])
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu
    }

    /// `(lo, hi)` of the state constraint box.
    #[getter]
    fn state_box(&self) -> (Vec<f64>, Vec<f64>) {
        (self.inner.state_box.lo.clone(), self.inner.state_box.hi.clone())
    }

    #[getter]
    fn input_box(&self) -> (Vec<f64>, Vec<f64>) {
        (self.inner.input_box.lo.clone(), self.inner.input_box.hi.clone())
    }

    fn __repr__(&self) -> String {
        format!("VanDerPol(dt={}, nu={})", self.inner.dt, self.inner.nu)
    }
}

/// Clustered `(x, u, x+)` samples around the observation points.
#[pyclass(name = "ClusterDataset", module = "kedmd", frozen)]
struct PyDataset {
    inner: ClusterDataset,
}

#[pymethods]
impl PyDataset {
    /// Samples `samples` triplets around each of the `d` observation points.
    #[staticmethod]
    #[pyo3(signature = (plant, d=1327, samples=25, seed=0, radius=None))]
    fn generate(plant: &PyVanDerPol, d: usize, samples: usize, seed: u64, radius: Option<f64>) -> PyResult<Self> {
        let degree = degree_for_grid_size(d).map_err(err)?;
        let nodes = build_observation_grid(degree, &plant.inner.sampling_box).map_err(err)?;
        let r = radius.unwrap_or(2f64.sqrt() / d as f64);
        let inner = build_cluster_dataset(&plant.inner, &nodes, r, samples, seed).map_err(err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: ClusterDataset::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn centers(&self) -> Vec<Vec<f64>> {
        self.inner.centers().to_rows()
    }

    #[getter]
    fn triplet_count(&self) -> usize {
        self.inner.triplet_count()
    }

    fn __len__(&self) -> usize {
        self.inner.clusters.len()
    }
}

/// Control-affine kEDMD surrogate `x+ = g0(x) + G(x) u`.
#[pyclass(name = "SurrogateModel", module = "kedmd", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySurrogate {
    inner: SurrogateModel,
}

#[pymethods]
impl PySurrogate {
    /// Fits the surrogate; `pi` pins the origin so that `f(0, 0) = 0`.
    #[staticmethod]
    #[pyo3(signature = (dataset, sigma, pi=true, jitter=1e-10))]
    fn fit(dataset: &PyDataset, sigma: f64, pi: bool, jitter: f64) -> PyResult<Self> {
        let spec = KernelSpec::new(dataset.inner.state_dim()).with_support_radius(sigma).with_jitter(jitter);
        Ok(PySurrogate { inner: fit_control_affine(&dataset.inner, &spec, pi).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PySurrogate { inner: SurrogateModel::from_document(&doc).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.to_document()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn predict(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict(&x, &u).map_err(err)
    }

    /// `(df/dx, df/du)` as nested row lists.
    fn jacobians(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<(Rows, Rows)> {
        let (a, b) = self.inner.jacobians(&x, &u).map_err(err)?;
        Ok((rows(&a), rows(&b)))
    }

    #[getter]
    fn is_pi_variant(&self) -> bool {
        self.inner.is_pi_variant()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn support_radius(&self) -> f64 {
        self.inner.kernel_spec().support_radius
    }

    /// Drift at the origin summed from the fitted coefficients.
    fn origin_drift(&self) -> Vec<f64> {
        self.inner.raw_origin_drift().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "SurrogateModel(d={}, sigma={}, pi={})",
            self.inner.node_count(),
            self.inner.kernel_spec().support_radius,
            self.inner.is_pi_variant()
        )
    }
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Estimated uniform, proportional and Lipschitz bounds of a model on the plant's boxes.
#[pyclass(name = "CertifiedBounds", module = "kedmd", frozen)]
struct PyBounds {
    inner: CertifiedBounds,
}

#[pymethods]
impl PyBounds {
    #[staticmethod]
    #[pyo3(signature = (plant, model, state_steps=41, input_steps=9, seed=0))]
    fn estimate(plant: &PyVanDerPol, model: &PySurrogate, state_steps: usize, input_steps: usize, seed: u64) -> PyResult<Self> {
        let config = BoundsConfig { state_steps, input_steps, seed, ..BoundsConfig::default() };
        let p = &plant.inner;
        let inner = bounds::certify(p, &model.inner, &p.state_box, &p.input_box, &config).map_err(err)?;
        Ok(PyBounds { inner })
    }

    /// Bounds with given `eta` and `lbar` on the plant's boxes.
    #[staticmethod]
    fn prescribed(plant: &PyVanDerPol, eta: f64, lbar: f64) -> Self {
        let p = &plant.inner;
        PyBounds { inner: CertifiedBounds::prescribed(eta, lbar, p.state_box.clone(), p.input_box.clone()) }
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn lbar(&self) -> f64 {
        self.inner.lbar
    }

    #[getter]
    fn c_x(&self) -> Option<f64> {
        self.inner.c_x
    }

    #[getter]
    fn c_u(&self) -> Option<f64> {
        self.inner.c_u
    }

    /// `min(c_x |x| + c_u |u|, eta)`, or `eta` without a proportional part.
    fn bound_at(&self, x: Vec<f64>, u: Vec<f64>) -> f64 {
        self.inner.bound_at(&x, &u)
    }

    fn as_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &self.inner)
    }

    /// Largest horizon with every tightened state box nonempty.
    fn max_horizon(&self) -> usize {
        max_horizon_box_rule(&self.inner.state_box, self.inner.eta, self.inner.lbar)
    }
}

/// Surrogate MPC with tightened constraints and designed terminal ingredients.
#[pyclass(name = "Controller", module = "kedmd")]
struct PyController {
    inner: MpcController<SurrogateModel>,
}

#[pymethods]
impl PyController {
    #[staticmethod]
    #[pyo3(signature = (plant, model, bounds, horizon=4, q=vec![1.0, 1.0], r=vec![1e-4], beta=10.0, gain_input_weight=0.45, samples=10_000, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn design(
        plant: &PyVanDerPol,
        model: &PySurrogate,
        bounds: &PyBounds,
        horizon: usize,
        q: Vec<f64>,
        r: Vec<f64>,
        beta: f64,
        gain_input_weight: f64,
        samples: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let p = &plant.inner;
        let b = &bounds.inner;
        let q = DMatrix::from_diagonal(&DVector::from_vec(q));
        let r = DMatrix::from_diagonal(&DVector::from_vec(r));
        let tc = TerminalConfig { beta, gain_input_weight, samples, seed };
        let (terminal, _) =
            design_terminal(&model.inner, &q, &r, &p.state_box, &p.input_box, b.eta, b.lbar, horizon, &tc).map_err(err)?;
        let config = MpcConfig {
            horizon,
            q,
            r,
            state_box: p.state_box.clone(),
            input_box: p.input_box.clone(),
            eta: b.eta,
            lbar: b.lbar,
            terminal,
            solver: SolverSettings::default(),
        };
        Ok(PyController { inner: MpcController::new(model.inner.clone(), config).map_err(err)? })
    }

    /// Solves the OCP at `x` and returns `(u, status, cost)`; the shifted solution warm-starts the next call.
    fn feedback(&mut self, x: Vec<f64>) -> PyResult<(Vec<f64>, String, f64)> {
        let (u, sol) = self.inner.feedback(&x).map_err(err)?;
        Ok((u, sol.status.as_str().to_string(), sol.cost))
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.config.horizon
    }

    /// Terminal weight `P`, gain `K`, level `c` and the linearization.
    fn terminal(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &self.inner.config.terminal)
    }

    /// Runs the true plant in closed loop and returns the trace with its metrics.
    #[pyo3(signature = (plant, x0, steps=600, label="run"))]
    fn simulate(&mut self, py: Python<'_>, plant: &PyVanDerPol, x0: Vec<f64>, steps: usize, label: &str) -> PyResult<Py<PyAny>> {
        self.inner.reset();
        let trace = run_closed_loop(&plant.inner, &mut self.inner, &x0, steps, label).map_err(err)?;
        let metrics = trace_metrics(&trace).map_err(err)?;
        let decrease = decrease_violations(&trace, 10.0 * metrics.plateau);
        to_dict(
            py,
            &serde_json::json!({
                "label": trace.label,
                "norms": trace.norms(),
                "states": trace.steps.iter().map(|s| &s.x).collect::<Vec<_>>(),
                "inputs": trace.steps.iter().map(|s| &s.u).collect::<Vec<_>>(),
                "values": trace.steps.iter().map(|s| s.value).collect::<Vec<_>>(),
                "status": trace.steps.iter().map(|s| s.status.as_str()).collect::<Vec<_>>(),
                "final_state": trace.final_state,
                "metrics": metrics,
                "decrease_violations": decrease,
            }),
        )
    }
}

/// Number of Padua points of the given degree.
#[pyfunction]
#[pyo3(name = "padua_count")]
fn py_padua_count(degree: usize) -> usize {
    padua_count(degree)
}

/// Origin followed by the Padua points on `[-2, 2]^2` for a grid of `d` points.
#[pyfunction]
fn observation_grid(d: usize) -> PyResult<Vec<Vec<f64>>> {
    let degree = degree_for_grid_size(d).map_err(err)?;
    Ok(build_observation_grid(degree, &AxisBox::symmetric(2, 2.0)).map_err(err)?.to_rows())
}

/// `k(x, y)` of the Wendland kernel with support radius `sigma`.
#[pyfunction]
fn wendland_kernel(x: Vec<f64>, y: Vec<f64>, sigma: f64) -> PyResult<f64> {
    let spec = KernelSpec::new(x.len()).with_support_radius(sigma);
    kedmd_mpc::kernel::kernel_eval(&x, &y, &spec).map_err(err)
}

/// Error amplification `sum_{i<k} lbar^i` after `k` predicted steps.
#[pyfunction]
#[pyo3(name = "cbar")]
fn py_cbar(k: usize, lbar: f64) -> PyResult<f64> {
    cbar(k, lbar).map_err(err)
}

/// Largest horizon whose tightened boxes of `[-h, h]^2` are all nonempty.
#[pyfunction]
#[pyo3(signature = (eta, lbar, half_width=1.9))]
fn max_horizon(eta: f64, lbar: f64, half_width: f64) -> usize {
    max_horizon_box_rule(&AxisBox::symmetric(2, half_width), eta, lbar)
}

#[pymodule]
fn kedmd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVanDerPol>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySurrogate>()?;
    m.add_class::<PyBounds>()?;
    m.add_class::<PyController>()?;
    m.add_function(wrap_pyfunction!(py_padua_count, m)?)?;
    m.add_function(wrap_pyfunction!(observation_grid, m)?)?;
    m.add_function(wrap_pyfunction!(wendland_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(py_cbar, m)?)?;
    m.add_function(wrap_pyfunction!(max_horizon, m)?)?;
    Ok(())
}
