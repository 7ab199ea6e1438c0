//! Self-contained predictive models behind a uniform predict interface.
//!
//! Every family implements [`Predictor`]. The linear model and the MLP also
//! implement [`Differentiable`], which the gradient attack requires.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::LabeledData;
use crate::error::{Error, Result};

mod forest;
mod gbm;
mod knn;
mod linear;
mod mlp;
mod tree;

pub use forest::{ForestSpec, RandomForest};
pub use gbm::{GbmSpec, GradientBoosting};
pub use knn::{KNearest, KnnSpec};
pub use linear::LinearModel;
pub use mlp::{Mlp, MlpSpec};
pub use tree::{DecisionTree, SplitCriterion, TreeSpec};

/// Read-only access to a fitted model's predictions.
pub trait Predictor: Send + Sync {
    /// Number of input columns the model was trained on.
    fn n_features(&self) -> usize;

    /// Predicts one scalar per row; `x` must have `n_features()` columns.
    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64>;

    fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_width(self.n_features(), x)?;
        Ok(self.predict_rows(x))
    }
}

/// Models whose output can be differentiated with respect to the inputs.
pub trait Differentiable: Predictor {
    /// Entry (i, j) is the derivative of the prediction for row i with respect to x[i, j].
    fn input_gradient_rows(&self, x: ArrayView2<f64>) -> Array2<f64>;

    /// Predictions and input gradients together; implementations may share the forward pass.
    fn predict_with_gradient_rows(&self, x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        (self.predict_rows(x), self.input_gradient_rows(x))
    }

    fn input_gradient(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(self.n_features(), x)?;
        Ok(self.input_gradient_rows(x))
    }
}

pub(crate) fn check_width(expected: usize, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::ShapeMismatch(format!(
            "model expects {expected} columns, data has {}",
            x.ncols()
        )));
    }
    Ok(())
}

/// What the scalar output means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    #[default]
    Regression,
    /// Output is the probability that the label equals `class`.
    Classification { class: i64 },
}

impl Task {
    pub fn classification() -> Self {
        Task::Classification { class: 0 }
    }

    /// Regression targets pass through; classification targets become 0/1 indicators.
    pub(crate) fn training_target(&self, y: &Array1<f64>) -> Array1<f64> {
        match *self {
            Task::Regression => y.clone(),
            Task::Classification { class } => y.mapv(|v| if v == class as f64 { 1.0 } else { 0.0 }),
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// Hyperparameters for one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ModelSpec {
    Linear,
    Tree(TreeSpec),
    Forest(ForestSpec),
    Gbm(GbmSpec),
    Knn(KnnSpec),
    Mlp(MlpSpec),
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Linear => "LM",
            ModelSpec::Tree(_) => "DT",
            ModelSpec::Forest(_) => "RF",
            ModelSpec::Gbm(_) => "GBM",
            ModelSpec::Knn(_) => "KNN",
            ModelSpec::Mlp(_) => "NN",
        }
    }

    /// Short description of the complexity knob, e.g. `3x32` or `160 trees`.
    pub fn complexity(&self) -> String {
        match self {
            ModelSpec::Linear => "-".into(),
            ModelSpec::Tree(s) => format!("depth {}", s.max_depth),
            ModelSpec::Forest(s) => format!("{} trees", s.n_trees),
            ModelSpec::Gbm(s) => format!("{} trees", s.n_trees),
            ModelSpec::Knn(s) => format!("k={}", s.k),
            ModelSpec::Mlp(s) => format!("{}x{}", s.layers, s.neurons),
        }
    }

    pub fn is_differentiable(&self) -> bool {
        matches!(self, ModelSpec::Linear | ModelSpec::Mlp(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Linear => Ok(()),
            ModelSpec::Tree(s) => s.validate(),
            ModelSpec::Forest(s) => s.validate(),
            ModelSpec::Gbm(s) => s.validate(),
            ModelSpec::Knn(s) => s.validate(),
            ModelSpec::Mlp(s) => s.validate(),
        }
    }
}

/// A fitted model. Parameters are frozen; attacks only ever read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum Model {
    Linear(LinearModel),
    Tree(DecisionTree),
    Forest(RandomForest),
    Gbm(GradientBoosting),
    Knn(KNearest),
    Mlp(Mlp),
}

impl Model {
    pub fn variant(&self) -> &'static str {
        match self {
            Model::Linear(_) => "linear",
            Model::Tree(_) => "tree",
            Model::Forest(_) => "forest",
            Model::Gbm(_) => "gbm",
            Model::Knn(_) => "knn",
            Model::Mlp(_) => "mlp",
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Linear(m) => m.task,
            Model::Tree(m) => m.task(),
            Model::Forest(m) => m.task,
            Model::Gbm(m) => m.task,
            Model::Knn(m) => m.task,
            Model::Mlp(m) => m.task(),
        }
    }

    fn inner(&self) -> &dyn Predictor {
        match self {
            Model::Linear(m) => m,
            Model::Tree(m) => m,
            Model::Forest(m) => m,
            Model::Gbm(m) => m,
            Model::Knn(m) => m,
            Model::Mlp(m) => m,
        }
    }

    /// The differentiable view of this model, or an error naming the variant.
    pub fn differentiable(&self) -> Result<&dyn Differentiable> {
        match self {
            Model::Linear(m) => Ok(m),
            Model::Mlp(m) => Ok(m),
            other => Err(Error::NonDifferentiable(other.variant())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} model ({} features)", self.variant(), self.n_features())
    }
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.inner().predict_rows(x)
    }
}

/// Fits the model family described by `spec`. Deterministic given `seed`.
pub fn fit(data: &LabeledData, spec: &ModelSpec, task: Task, seed: u64) -> Result<Model> {
    spec.validate()?;
    if let Task::Classification { .. } = task {
        if let Some(v) = data.target.iter().find(|v| v.fract() != 0.0) {
            return Err(Error::invalid(format!("classification label {v} is not an integer")));
        }
    }
    Ok(match spec {
        ModelSpec::Linear => Model::Linear(LinearModel::fit(data, task)?),
        ModelSpec::Tree(s) => Model::Tree(DecisionTree::fit(data, s, task)?),
        ModelSpec::Forest(s) => Model::Forest(RandomForest::fit(data, s, task, seed)?),
        ModelSpec::Gbm(s) => Model::Gbm(GradientBoosting::fit(data, s, task)?),
        ModelSpec::Knn(s) => Model::Knn(KNearest::fit(data, s, task)?),
        ModelSpec::Mlp(s) => Model::Mlp(Mlp::fit(data, s, task, seed)?),
    })
}
