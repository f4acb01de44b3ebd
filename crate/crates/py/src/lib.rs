//! Python bindings: run configurations, the full command pipeline, the
//! gradient-oracle suites and trajectory-file access.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::path::PathBuf;
use tdks_learn::commands;
use tdks_learn::config;
use tdks_learn::io;

fn err(e: tdks_learn::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py_summary<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(v)
        .map_err(|e| PyRuntimeError::new_err(format!("summary serialization: {e}")))?;
    json_to_py(py, &json)
}

/// Run configuration: domain, grids, packet, momenta, model and optimizer
/// settings. Construct from a preset or a JSON file.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: config::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Named preset: desk-pointwise, desk-functional, paper-pointwise or
    /// paper-functional.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(PyRunConfig { inner: config::RunConfig::from_preset(name).map_err(err)? })
    }

    /// Load a JSON run configuration from disk.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig { inner: config::RunConfig::load(&path).map_err(err)? })
    }

    /// FNV-1a fingerprint of the configuration, as embedded in every
    /// output file header.
    #[getter]
    fn hash(&self) -> String {
        format!("{:016x}", self.inner.hash())
    }

    #[getter]
    fn train_momenta(&self) -> Vec<f64> {
        self.inner.train_momenta.clone()
    }

    #[getter]
    fn test_momenta(&self) -> Vec<f64> {
        self.inner.test_momenta.clone()
    }

    /// Time step of the control grid in atomic units.
    #[getter]
    fn dt_au(&self) -> PyResult<f64> {
        self.inner.dt_au().map_err(err)
    }

    /// (x_min, x_max, intervals, steps) of the control grid.
    #[getter]
    fn control_grid(&self) -> PyResult<(f64, f64, usize, usize)> {
        let g = self.inner.tdks_grid().map_err(err)?;
        Ok((g.x_min, g.x_max, g.intervals, g.steps))
    }

    /// Apply overrides; unknown keys are rejected. Supported: kind,
    /// train_momenta, max_iter, mu, seed, steps, dt_au, substeps, hidden.
    #[pyo3(signature = (**kwargs))]
    fn with_overrides(&self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = self.inner.clone();
        if let Some(kwargs) = kwargs {
            for (key, value) in kwargs.iter() {
                let key: String = key.extract()?;
                match key.as_str() {
                    "kind" => cfg.model.kind = value.extract()?,
                    "train_momenta" => cfg.train_momenta = value.extract()?,
                    "max_iter" => cfg.optimizer.max_iter = value.extract()?,
                    "mu" => cfg.mu = value.extract()?,
                    "seed" => cfg.model.seed = value.extract()?,
                    "steps" => cfg.tdks.steps = value.extract()?,
                    "dt_au" => cfg.tdks.dt_au = Some(value.extract()?),
                    "substeps" => cfg.tdse.substeps = value.extract()?,
                    "hidden" => cfg.model.hidden = value.extract()?,
                    other => {
                        return Err(PyValueError::new_err(format!("unknown override '{other}'")))
                    }
                }
            }
        }
        cfg.preset = "custom".into();
        cfg.validate().map_err(err)?;
        Ok(PyRunConfig { inner: cfg })
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(preset='{}', hash='{}')",
            self.inner.preset,
            format!("{:016x}", self.inner.hash())
        )
    }
}

/// Solve the two-electron reference problem and write density trajectories
/// plus Kohn-Sham initial pairs. Returns the written paths.
#[pyfunction]
fn generate_reference(cfg: &PyRunConfig, data_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    commands::cmd_generate_reference(&cfg.inner, &data_dir).map_err(err)
}

/// Re-invert Kohn-Sham initial pairs from existing reference files.
#[pyfunction]
fn invert_initial(cfg: &PyRunConfig, data_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    commands::cmd_invert_initial(&cfg.inner, &data_dir).map_err(err)
}

/// Learn pointwise correlation values; returns the training summary.
#[pyfunction]
#[pyo3(signature = (cfg, data_dir, out_dir, resume=None))]
fn train_pointwise(
    py: Python<'_>,
    cfg: &PyRunConfig,
    data_dir: PathBuf,
    out_dir: PathBuf,
    resume: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let summary = commands::cmd_train_pointwise(
        &cfg.inner,
        &data_dir,
        &out_dir,
        resume.as_deref(),
        |_| {},
    )
    .map_err(err)?;
    Ok(to_py_summary(py, &summary)?.unbind())
}

/// Learn memory-functional model parameters; returns the training summary.
#[pyfunction]
#[pyo3(signature = (cfg, data_dir, out_dir, resume=None))]
fn train_functional(
    py: Python<'_>,
    cfg: &PyRunConfig,
    data_dir: PathBuf,
    out_dir: PathBuf,
    resume: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let summary = commands::cmd_train_functional(
        &cfg.inner,
        &data_dir,
        &out_dir,
        resume.as_deref(),
        |_| {},
    )
    .map_err(err)?;
    Ok(to_py_summary(py, &summary)?.unbind())
}

/// Propagate a trained control, optionally past the training horizon.
#[pyfunction]
#[pyo3(signature = (cfg, data_dir, out_dir, checkpoint, momenta=None, extra_steps=0))]
fn rollout(
    py: Python<'_>,
    cfg: &PyRunConfig,
    data_dir: PathBuf,
    out_dir: PathBuf,
    checkpoint: PathBuf,
    momenta: Option<Vec<f64>>,
    extra_steps: usize,
) -> PyResult<Py<PyAny>> {
    let momenta = momenta.unwrap_or_else(|| cfg.inner.train_momenta.clone());
    let summary = commands::cmd_rollout(
        &cfg.inner,
        &data_dir,
        &out_dir,
        &checkpoint,
        &momenta,
        extra_steps,
    )
    .map_err(err)?;
    Ok(to_py_summary(py, &summary)?.unbind())
}

/// Score a checkpoint on the configured train and test momenta.
#[pyfunction]
fn evaluate(
    py: Python<'_>,
    cfg: &PyRunConfig,
    data_dir: PathBuf,
    out_dir: PathBuf,
    checkpoint: PathBuf,
) -> PyResult<Py<PyAny>> {
    let summary =
        commands::cmd_evaluate(&cfg.inner, &data_dir, &out_dir, &checkpoint).map_err(err)?;
    Ok(to_py_summary(py, &summary)?.unbind())
}

/// Export per-time CSV snapshots for plotting.
#[pyfunction]
#[pyo3(signature = (reference, times, out_dir, predicted=None, checkpoint=None))]
fn export_csv(
    py: Python<'_>,
    reference: PathBuf,
    times: Vec<f64>,
    out_dir: PathBuf,
    predicted: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let exports = commands::cmd_export_csv(
        &reference,
        predicted.as_deref(),
        checkpoint.as_deref(),
        &times,
        &out_dir,
    )
    .map_err(err)?;
    Ok(to_py_summary(py, &exports)?.unbind())
}

/// Run the gradient-oracle suites (dense Jacobian + finite differences).
/// Returns a list of {name, max_error, tolerance, passed} dicts.
#[pyfunction]
fn gradcheck(py: Python<'_>) -> PyResult<Py<PyList>> {
    let reports = tdks_learn::gradcheck::run_all().map_err(err)?;
    let list = PyList::empty(py);
    for r in &reports {
        let d = PyDict::new(py);
        d.set_item("name", &r.name)?;
        d.set_item("max_error", r.max_error)?;
        d.set_item("tolerance", r.tolerance)?;
        d.set_item("passed", r.passed())?;
        list.append(d)?;
    }
    Ok(list.unbind())
}

fn rows_to_py(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Read a density-trajectory container: header dict plus densities and
/// currents as nested lists, shape (frames, points).
#[pyfunction]
fn load_density_trajectory(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let (header, densities, currents) = io::load_density_trajectory(&path).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("header", to_py_summary(py, &header)?)?;
    d.set_item("densities", rows_to_py(&densities))?;
    d.set_item("currents", rows_to_py(&currents))?;
    Ok(d.into_any().unbind())
}

/// Soft-Coulomb hydrogen ground state on a fresh grid; returns
/// (positions, orbital, energy).
#[pyfunction]
fn hydrogen_ground_state(
    x_min: f64,
    x_max: f64,
    intervals: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let spec =
        tdks_learn::grid::build_grid(x_min, x_max, intervals, 1.0, 1).map_err(err)?;
    let (phi, energy) = tdks_learn::tdse::hydrogen_ground_state(&spec).map_err(err)?;
    Ok((spec.positions().to_vec(), phi.to_vec(), energy))
}

#[pymodule]
fn tdks_learn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(generate_reference, m)?)?;
    m.add_function(wrap_pyfunction!(invert_initial, m)?)?;
    m.add_function(wrap_pyfunction!(train_pointwise, m)?)?;
    m.add_function(wrap_pyfunction!(train_functional, m)?)?;
    m.add_function(wrap_pyfunction!(rollout, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(export_csv, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(load_density_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(hydrogen_ground_state, m)?)?;
    m.add("FS_PER_AU", tdks_learn::FS_PER_AU)?;
    Ok(())
}
