//! Python bindings. Tables cross the boundary as lists of rows, profiles and
//! results as dicts of lists.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pdpoison::attack::{anchor_target, build_target, TargetKind};
use pdpoison::data::{ColumnKind, Dataset, LabeledData};
use pdpoison::harness::{run_experiment as run_spec, ExperimentSpec};
use pdpoison::{
    build_grid, genetic_attack as run_genetic, gradient_attack as run_gradient, partial_dependence as pd,
    AttackConfig, AttackResult, Error, GeneticParams, GradientParams, ModelSpec, Predictor, Strategy, Task,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::ShapeMismatch(_) | Error::NonDifferentiable(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), n_cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(x: ndarray::ArrayView2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn dataset(rows: &[Vec<f64>], columns: Option<Vec<String>>, categorical: &[String]) -> PyResult<Dataset> {
    let x = to_array(rows)?;
    let names = columns.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
    let kinds = names
        .iter()
        .map(|n| if categorical.contains(n) { ColumnKind::Categorical } else { ColumnKind::Continuous })
        .collect();
    Dataset::new(x, names, kinds).map_err(py_err)
}

/// A fitted model; any family, serializable to JSON.
#[pyclass(frozen, name = "Model")]
struct PyModel {
    inner: pdpoison::Model,
}

#[pymethods]
impl PyModel {
    /// Fits a model. `spec` is a JSON object such as `{"family": "gbm", "n_trees": 40}`.
    #[staticmethod]
    #[pyo3(signature = (features, target, spec, classification=false, seed=0))]
    fn fit(features: Vec<Vec<f64>>, target: Vec<f64>, spec: &str, classification: bool, seed: u64) -> PyResult<Self> {
        let spec: ModelSpec = serde_json::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let data = LabeledData::new(dataset(&features, None, &[])?, Array1::from(target), "y").map_err(py_err)?;
        let task = if classification { Task::classification() } else { Task::Regression };
        let inner = pdpoison::fit(&data, &spec, task, seed).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: pdpoison::Model::from_json(text).map_err(py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict(to_array(&rows)?.view()).map_err(py_err)?.to_vec())
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant()
    }

    #[getter]
    fn is_differentiable(&self) -> bool {
        self.inner.differentiable().is_ok()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.inner)
    }
}

/// Friedman #1 data: `(rows, target, column_names)`.
#[pyfunction]
#[pyo3(signature = (n_rows, n_noise=0, seed=0))]
fn generate_friedman(n_rows: usize, n_noise: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<String>)> {
    let d = pdpoison::data::generate_friedman(n_rows, n_noise, seed).map_err(py_err)?;
    Ok((to_rows(d.features.values()), d.target.to_vec(), d.features.column_names().to_vec()))
}

/// PD profile of `model` for `column`: dict with `z`, `pd`, `pd_centered`.
#[pyfunction]
#[pyo3(signature = (model, features, column, grid_points=40))]
fn partial_dependence<'py>(
    py: Python<'py>,
    model: &PyModel,
    features: Vec<Vec<f64>>,
    column: usize,
    grid_points: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(&features, None, &[])?;
    let grid = build_grid(&data, column, grid_points).map_err(py_err)?;
    let profile = pd(&model.inner, &data, &grid).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("z", grid.points().to_vec())?;
    out.set_item("pd", profile.values)?;
    out.set_item("pd_centered", profile.centered_values)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn attack_config(
    model: &PyModel,
    data: &Dataset,
    column: usize,
    strategy: &str,
    centered: Option<bool>,
    target: Option<&str>,
    amplitude: f64,
    constant_columns: Vec<usize>,
    seed: u64,
    max_iterations: usize,
    grid_points: usize,
) -> PyResult<AttackConfig> {
    let strategy: Strategy = strategy.parse().map_err(py_err)?;
    let centered = centered.unwrap_or(strategy.default_centered());
    let grid = build_grid(data, column, grid_points).map_err(py_err)?;
    let config = match strategy {
        Strategy::Robustness => AttackConfig::robustness(grid),
        Strategy::Targeted => {
            let kind: TargetKind = target.unwrap_or("decreasing-ramp").parse().map_err(py_err)?;
            let mut t = build_target(&kind, &grid, amplitude).map_err(py_err)?;
            if !centered {
                t = anchor_target(&t, &pd(&model.inner, data, &grid).map_err(py_err)?);
            }
            AttackConfig::targeted(grid, t)
        }
    };
    Ok(config
        .with_centered(centered)
        .with_constant_columns(constant_columns)
        .with_seed(seed)
        .with_max_iterations(max_iterations))
}

fn result_dict<'py>(py: Python<'py>, r: &AttackResult) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("poisoned", to_rows(r.poisoned.values()))?;
    out.set_item("loss_trace", r.loss_trace.clone())?;
    out.set_item("final_loss", r.final_loss)?;
    out.set_item("z", r.profile_before.grid.points().to_vec())?;
    out.set_item("pd_before", r.profile_before.values.clone())?;
    out.set_item("pd_after", r.profile_after.values.clone())?;
    out.set_item("target", r.target.clone())?;
    out.set_item("centered_distance", r.centered_distance())?;
    out.set_item("level_shift", r.level_shift())?;
    Ok(out)
}

/// Model-agnostic genetic attack; returns a dict with the poisoned rows,
/// loss trace and profiles.
#[pyfunction]
#[pyo3(signature = (
    model, features, column, strategy="robustness", centered=None, target=None, amplitude=1.0,
    constant_columns=vec![], seed=0, max_iterations=100, grid_points=40, pop_count=50,
    crossover_ratio=0.5, std_ratio=0.1, init_std_multiplier=3.0, mutation_with_constraints=true, elitism_count=2
))]
#[allow(clippy::too_many_arguments)]
fn genetic_attack<'py>(
    py: Python<'py>,
    model: &PyModel,
    features: Vec<Vec<f64>>,
    column: usize,
    strategy: &str,
    centered: Option<bool>,
    target: Option<&str>,
    amplitude: f64,
    constant_columns: Vec<usize>,
    seed: u64,
    max_iterations: usize,
    grid_points: usize,
    pop_count: usize,
    crossover_ratio: f64,
    std_ratio: f64,
    init_std_multiplier: f64,
    mutation_with_constraints: bool,
    elitism_count: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(&features, None, &[])?;
    let config = attack_config(
        model, &data, column, strategy, centered, target, amplitude, constant_columns, seed, max_iterations,
        grid_points,
    )?;
    let params = GeneticParams {
        pop_count,
        crossover_ratio,
        std_ratio,
        init_std_multiplier,
        mutation_with_constraints,
        elitism_count,
    };
    let result = py.detach(|| run_genetic(&model.inner, &data, &config, &params)).map_err(py_err)?;
    result_dict(py, &result)
}

/// Adam-based attack for linear and MLP models.
#[pyfunction]
#[pyo3(signature = (
    model, features, column, strategy="robustness", centered=None, target=None, amplitude=1.0,
    constant_columns=vec![], seed=0, max_iterations=100, grid_points=40, learning_rate=0.01,
    init_noise_ratio=0.05
))]
#[allow(clippy::too_many_arguments)]
fn gradient_attack<'py>(
    py: Python<'py>,
    model: &PyModel,
    features: Vec<Vec<f64>>,
    column: usize,
    strategy: &str,
    centered: Option<bool>,
    target: Option<&str>,
    amplitude: f64,
    constant_columns: Vec<usize>,
    seed: u64,
    max_iterations: usize,
    grid_points: usize,
    learning_rate: f64,
    init_noise_ratio: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(&features, None, &[])?;
    let differentiable = model.inner.differentiable().map_err(py_err)?;
    let config = attack_config(
        model, &data, column, strategy, centered, target, amplitude, constant_columns, seed, max_iterations,
        grid_points,
    )?;
    let params = GradientParams { learning_rate, init_noise_ratio, ..Default::default() };
    let result = py.detach(|| run_gradient(differentiable, &data, &config, &params)).map_err(py_err)?;
    result_dict(py, &result)
}

/// Runs an experiment spec (JSON text) and returns the report CSV.
#[pyfunction]
fn run_experiment(py: Python<'_>, spec: &str) -> PyResult<String> {
    let spec = ExperimentSpec::from_json(spec).map_err(py_err)?;
    let report = py.detach(|| run_spec(&spec)).map_err(py_err)?;
    Ok(report.to_csv())
}

#[pymodule]
fn pdpoison_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_friedman, m)?)?;
    m.add_function(wrap_pyfunction!(partial_dependence, m)?)?;
    m.add_function(wrap_pyfunction!(genetic_attack, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_attack, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
