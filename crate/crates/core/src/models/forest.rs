use ndarray::{Array1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_for_task, CartTree, TreeSpec};
use super::{Predictor, Task};
use crate::data::LabeledData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestSpec {
    pub n_trees: usize,
    pub max_depth: usize,
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec {
            n_trees: 100,
            max_depth: 8,
        }
    }
}

impl ForestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 {
            return Err(Error::invalid("forest needs n_trees >= 1 and max_depth >= 1"));
        }
        Ok(())
    }
}

/// Bagged CART trees; the prediction is the mean of the member trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<CartTree>,
    pub task: Task,
}

impl RandomForest {
    pub fn fit(data: &LabeledData, spec: &ForestSpec, task: Task, seed: u64) -> Result<Self> {
        spec.validate()?;
        let x = data.features.values();
        let y = task.training_target(&data.target);
        let n = y.len();
        let tree_spec = TreeSpec {
            max_depth: spec.max_depth,
            ..TreeSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..spec.n_trees)
            .map(|_| {
                let rows = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow_for_task(x, y.view(), rows, &tree_spec, task)
            })
            .collect();
        Ok(RandomForest { trees, task })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Per-tree predictions, one row per input row.
    pub fn tree_predictions(&self, x: ArrayView2<f64>) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((x.nrows(), self.trees.len()), |(i, t)| {
            self.trees[t].predict_row(x.row(i))
        })
    }
}

impl Predictor for RandomForest {
    fn n_features(&self) -> usize {
        self.trees[0].n_features()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let k = self.trees.len() as f64;
        x.axis_iter(Axis(0))
            .map(|row| self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_friedman;

    #[test]
    fn prediction_is_mean_of_trees() {
        let d = generate_friedman(80, 0, 1).unwrap();
        let f = RandomForest::fit(&d, &ForestSpec { n_trees: 3, max_depth: 3 }, Task::Regression, 5).unwrap();
        let x = d.features.values();
        let per_tree = f.tree_predictions(x);
        let p = f.predict(x).unwrap();
        for i in 0..x.nrows() {
            let expect = (per_tree[[i, 0]] + per_tree[[i, 1]] + per_tree[[i, 2]]) / 3.0;
            assert!((p[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_determinism() {
        let d = generate_friedman(60, 1, 2).unwrap();
        let spec = ForestSpec { n_trees: 4, max_depth: 4 };
        let a = RandomForest::fit(&d, &spec, Task::Regression, 9).unwrap();
        let b = RandomForest::fit(&d, &spec, Task::Regression, 9).unwrap();
        let c = RandomForest::fit(&d, &spec, Task::Regression, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
