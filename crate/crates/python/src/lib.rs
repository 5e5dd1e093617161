//! Python bindings: point clouds, networks, training, extraction, metrics
//! and the critical-point census. Arrays cross the boundary as nested lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nsh_core::config::RunConfig;
use nsh_core::contour::{self, BoxDomain, Contour};
use nsh_core::geometry::{self, PointFormat};
use nsh_core::losses::{self, ScheduleConfig};
use nsh_core::metrics;
use nsh_core::morse::{self, MorseConfig};
use nsh_core::sinenet::{load_model, save_model};
use nsh_core::trainer::{self, LogObserver};
use nsh_core::{AnalyticField, Architecture, ScalarField};

fn err(e: nsh_core::Error) -> PyErr {
    match e {
        nsh_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_py_json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn flatten(points: &[Vec<f64>]) -> PyResult<(usize, Vec<f64>)> {
    let dim = points.first().map_or(3, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(PyValueError::new_err("all points must have the same length"));
    }
    Ok((dim, points.iter().flatten().copied().collect()))
}

#[pyclass(name = "PointCloud", module = "nsh", skip_from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: nsh_core::PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (points, normals=None))]
    fn new(points: Vec<Vec<f64>>, normals: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let (dim, coords) = flatten(&points)?;
        let normals = normals.map(|n| flatten(&n).map(|(_, v)| v)).transpose()?;
        Ok(PyPointCloud {
            inner: nsh_core::PointCloud::new(dim, coords, normals).map_err(err)?,
        })
    }

    /// Reads .xyz or .ply.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let fmt = PointFormat::from_path(&path)
            .ok_or_else(|| PyValueError::new_err(format!("{}: unrecognized extension", path.display())))?;
        Ok(PyPointCloud {
            inner: geometry::load_point_cloud(&path, fmt).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().map(<[f64]>::to_vec).collect()
    }

    fn has_normals(&self) -> bool {
        self.inner.has_normals()
    }
}

#[pyclass(name = "SineNetwork", module = "nsh", skip_from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: nsh_core::SineNetwork,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (input_dim=3, hidden_layers=4, width=256, omega0=30.0, seed=0))]
    fn new(input_dim: usize, hidden_layers: usize, width: usize, omega0: f64, seed: u64) -> PyResult<Self> {
        let arch = Architecture {
            input_dim,
            hidden_layers,
            width,
            activation: nsh_core::Activation::Sine { omega0 },
        };
        Ok(PyNetwork {
            inner: nsh_core::SineNetwork::init(arch, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: load_model(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.architecture().input_dim
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params().len()
    }

    /// `(value, gradient, hessian)` at a point in normalized coordinates.
    fn jet(&self, x: Vec<f64>) -> PyResult<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let j = self.inner.forward_jet(&x).map_err(err)?;
        let d = j.dim;
        Ok((j.value, j.grad().to_vec(), (0..d).map(|a| j.hess[a][..d].to_vec()).collect()))
    }

    fn values(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let (_, xs) = flatten(&points)?;
        self.inner.values(&xs).map_err(err)
    }
}

/// Trains a fresh network; `config` is a run-config TOML string.
#[pyfunction]
#[pyo3(signature = (cloud, config=None, iters=None, seed=None, hidden_layers=None, width=None))]
fn fit<'py>(
    py: Python<'py>,
    cloud: &PyPointCloud,
    config: Option<&str>,
    iters: Option<usize>,
    seed: Option<u64>,
    hidden_layers: Option<usize>,
    width: Option<usize>,
) -> PyResult<(PyNetwork, Bound<'py, PyAny>)> {
    let mut cfg = match config {
        Some(t) => RunConfig::from_toml(t).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(v) = iters {
        cfg.train.iters = v;
    }
    if let Some(v) = seed {
        cfg.train.seed = v;
    }
    if let Some(v) = hidden_layers {
        cfg.network.hidden_layers = v;
    }
    if let Some(v) = width {
        cfg.network.width = v;
    }
    cfg.validate().map_err(err)?;
    let arch = cfg.network.architecture(cloud.inner.dim()).map_err(err)?;
    let cloud = cloud.inner.clone();
    let (net, history) = py
        .detach(move || {
            let net = nsh_core::SineNetwork::init(arch, cfg.train.seed)?;
            trainer::fit(&cloud, net, &cfg.train, &mut LogObserver)
        })
        .map_err(err)?;
    Ok((PyNetwork { inner: net }, to_py_json(py, &history.records)?))
}

/// Zero contour as a dict with `vertices` and `triangles` (3D) or `segments` (2D).
#[pyfunction]
#[pyo3(signature = (net, resolution=256, iso=0.0, world_units=false))]
fn extract<'py>(py: Python<'py>, net: &PyNetwork, resolution: usize, iso: f64, world_units: bool) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    match contour::extract(&net.inner, resolution, iso, world_units).map_err(err)? {
        Contour::Curve(p) => {
            out.set_item("vertices", p.vertices().iter().map(|v| v.to_vec()).collect::<Vec<_>>())?;
            out.set_item("segments", p.segments().iter().map(|s| s.to_vec()).collect::<Vec<_>>())?;
            out.set_item("components", p.connected_components())?;
        }
        Contour::Surface(m) => {
            out.set_item("vertices", m.vertices().iter().map(|v| v.to_vec()).collect::<Vec<_>>())?;
            out.set_item("triangles", m.triangles().iter().map(|t| t.to_vec()).collect::<Vec<_>>())?;
            out.set_item("euler_characteristic", m.euler_characteristic())?;
        }
    }
    Ok(out)
}

/// Regularizer weight factor at `iteration` of `total_iters`.
#[pyfunction]
fn tau(iteration: usize, total_iters: usize) -> PyResult<f64> {
    let schedule = ScheduleConfig::default().for_iters(total_iters);
    losses::tau(&schedule, iteration).map_err(err)
}

#[pyfunction]
fn chamfer_l1(a: &PyPointCloud, b: &PyPointCloud) -> PyResult<f64> {
    metrics::chamfer_l1(&a.inner, &b.inner).map_err(err)
}

/// `(fscore, precision, recall)` in percent.
#[pyfunction]
fn f_score(gt: &PyPointCloud, pred: &PyPointCloud, threshold: f64) -> PyResult<(f64, f64, f64)> {
    let f = metrics::f_score(&gt.inner, &pred.inner, threshold).map_err(err)?;
    Ok((f.fscore, f.precision, f.recall))
}

fn builtin(name: &str) -> PyResult<AnalyticField> {
    match name {
        "sphere" => Ok(AnalyticField::unit_sphere()),
        "circle" => Ok(AnalyticField::unit_circle()),
        "torus" => Ok(AnalyticField::Torus { major: 1.0, minor: 0.4 }),
        "sin_product" => Ok(AnalyticField::SinProduct),
        other => Err(PyValueError::new_err(format!("unknown builtin field `{other}`"))),
    }
}

/// Critical-point census of a network or a named closed-form field
/// (`sphere`, `circle`, `torus`, `sin_product`), returned as a dict. Shell
/// statistics are only drawn for the distance-field builtins.
#[pyfunction]
#[pyo3(signature = (field, delta=0.05, resolution=64, half_width=None, shell_samples=0, seed=0))]
fn analyze<'py>(
    py: Python<'py>,
    field: &Bound<'py, PyAny>,
    delta: f64,
    resolution: usize,
    half_width: Option<f64>,
    shell_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let analytic;
    let net;
    let f: &dyn ScalarField = if let Ok(n) = field.cast::<PyNetwork>() {
        net = n.borrow().inner.clone();
        &net
    } else {
        analytic = builtin(&field.extract::<String>()?)?;
        &analytic
    };
    let d = f.dim();
    let h = half_width.unwrap_or(if field.is_instance_of::<PyNetwork>() { 1.0 } else { 1.5 });
    let domain = BoxDomain::new(vec![-h; d], vec![h; d]).map_err(err)?;
    let config = MorseConfig {
        resolution,
        delta,
        ..MorseConfig::default()
    };
    let cloud = if shell_samples > 0 { analytic_cloud(f, field)? } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = morse::analyze(f, &domain, &config, cloud.as_ref(), shell_samples.max(1), &mut rng).map_err(err)?;
    to_py_json(py, &report)
}

fn analytic_cloud(f: &dyn ScalarField, field: &Bound<'_, PyAny>) -> PyResult<Option<nsh_core::PointCloud>> {
    let Ok(name) = field.extract::<String>() else {
        return Ok(None);
    };
    let a = builtin(&name)?;
    Ok(a.surface_samples(2000)
        .ok()
        .map(|pts| nsh_core::PointCloud::new(f.dim(), pts, None))
        .transpose()
        .map_err(err)?)
}

#[pymodule]
fn nsh(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(tau, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_l1, m)?)?;
    m.add_function(wrap_pyfunction!(f_score, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    Ok(())
}
