//! Python access to `selfcon-core`: load an experiment config, run the solvers, get
//! plain dicts and lists back.
//!
//! Config problems raise `ValueError`; numerical failures raise
//! `selfcon.NumericalError` whose second argument is the JSON diagnostic.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use selfcon_core::bounds::check_expansion_condition;
use selfcon_core::particles::thermodynamic_consistency_run;
use selfcon_core::response::{response_report, response_sweep};
use selfcon_core::{cli, Error, ExperimentConfig};

create_exception!(selfcon, NumericalError, PyRuntimeError);

fn to_py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err((e.to_string(), cli::diagnostic(&e).to_string()))
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A validated experiment configuration (same TOML layout as the `selfcon` CLI).
#[pyclass(module = "selfcon", frozen)]
struct Experiment {
    config: ExperimentConfig,
}

impl Experiment {
    fn at(&self, t: Option<f64>) -> PyResult<ExperimentConfig> {
        match t {
            Some(t) => self.config.clone().with_t(t).map_err(to_py_err),
            None => Ok(self.config.clone()),
        }
    }
}

#[pymethods]
impl Experiment {
    #[new]
    fn new(toml: &str) -> PyResult<Self> {
        let config = ExperimentConfig::from_toml_str(toml).map_err(to_py_err)?;
        Ok(Self { config })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let config = ExperimentConfig::load(&path).map_err(to_py_err)?;
        Ok(Self { config })
    }

    #[getter]
    fn t(&self) -> f64 {
        self.config.t
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.config.resolution
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.config)
    }

    fn with_t(&self, t: f64) -> PyResult<Self> {
        Ok(Self { config: self.at(Some(t))? })
    }

    fn with_resolution(&self, n: usize) -> PyResult<Self> {
        let config = self.config.clone().with_resolution(n).map_err(to_py_err)?;
        Ok(Self { config })
    }

    /// Grid points `j/N` of the configured resolution.
    fn grid(&self) -> Vec<f64> {
        let n = self.config.resolution;
        (0..n).map(|j| j as f64 / n as f64).collect()
    }

    /// Fixed-point solve; the report dict gains a `contraction_rate` entry.
    #[pyo3(signature = (t=None))]
    fn fixed_point(&self, py: Python<'_>, t: Option<f64>) -> PyResult<Py<PyAny>> {
        let config = self.at(t)?;
        let value = py
            .detach(|| -> selfcon_core::Result<Value> {
                let system = config.build_system()?;
                let report = system.solve_fixed_density(config.t, &config.fixed_point_config()?)?;
                let rate = report.contraction_rate(config.fixed_point.tolerance);
                let mut v = serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?;
                v["contraction_rate"] = json!(rate);
                Ok(v)
            })
            .map_err(to_py_err)?;
        to_py(py, &value)
    }

    #[pyo3(signature = (t=None))]
    fn response(&self, py: Python<'_>, t: Option<f64>) -> PyResult<Py<PyAny>> {
        let config = self.at(t)?;
        let report = py
            .detach(|| {
                let system = config.build_system()?;
                response_report(&system, config.t, &config.response_config()?)
            })
            .map_err(to_py_err)?;
        to_py(py, &report)
    }

    /// One dict per grid point; failed points carry `error` instead of `report`.
    #[pyo3(signature = (t_grid=None))]
    fn sweep(&self, py: Python<'_>, t_grid: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
        let config = &self.config;
        let grid = t_grid.unwrap_or_else(|| config.t_grid.clone());
        let rows = py
            .detach(|| -> selfcon_core::Result<_> {
                let system = config.build_system()?;
                Ok(response_sweep(&system, &grid, &config.response_config()?))
            })
            .map_err(to_py_err)?;
        to_py(py, &rows)
    }

    /// Particle run; adds `positions` (final ensemble) and `rho` to the report dict.
    #[pyo3(signature = (t=None))]
    fn particles(&self, py: Python<'_>, t: Option<f64>) -> PyResult<Py<PyAny>> {
        let config = self.at(t)?;
        let value = py
            .detach(|| -> selfcon_core::Result<Value> {
                let system = config.build_system()?;
                let report = thermodynamic_consistency_run(
                    &system,
                    config.t,
                    &config.particle_config(),
                    &config.fixed_point_config()?,
                )?;
                let mut v = serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?;
                v["positions"] = json!(report.final_ensemble.as_ref().map(|e| &e.positions));
                v["rho"] = json!(report.rho.as_ref().map(|r| r.values()));
                Ok(v)
            })
            .map_err(to_py_err)?;
        to_py(py, &value)
    }

    /// `N (max|f''|/ω³ + 1/ω²)` for the configured map.
    fn expansion_condition(&self) -> PyResult<f64> {
        let map = self.config.build_map().map_err(to_py_err)?;
        Ok(check_expansion_condition(&map))
    }

    fn __repr__(&self) -> String {
        format!("Experiment(resolution={}, t={})", self.config.resolution, self.config.t)
    }
}

/// Runs the command-line front end in-process and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| cli::run(std::iter::once("selfcon".to_string()).chain(args)))
}

#[pymodule]
fn selfcon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("EXIT_OK", cli::EXIT_OK)?;
    m.add("EXIT_CONFIG", cli::EXIT_CONFIG)?;
    m.add("EXIT_NUMERICAL", cli::EXIT_NUMERICAL)?;
    Ok(())
}
