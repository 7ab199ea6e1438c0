use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::tree::{CartTree, SplitCriterion, TreeSpec};
use super::{Predictor, Task};
use crate::data::LabeledData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmSpec {
    /// Zero is allowed and yields the constant base model.
    pub n_trees: usize,
    pub max_depth: usize,
    /// Shrinkage applied to every tree.
    pub learning_rate: f64,
}

impl Default for GbmSpec {
    fn default() -> Self {
        GbmSpec {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
        }
    }
}

impl GbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("gbm needs max_depth >= 1 and a positive learning rate"));
        }
        Ok(())
    }
}

/// Gradient-boosted regression trees. Squared-error loss for regression;
/// logistic loss with Newton leaf values and a log-odds base score for
/// classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    base_score: f64,
    learning_rate: f64,
    trees: Vec<CartTree>,
    n_features: usize,
    pub task: Task,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl GradientBoosting {
    pub fn fit(data: &LabeledData, spec: &GbmSpec, task: Task) -> Result<Self> {
        spec.validate()?;
        let x = data.features.values();
        let y = task.training_target(&data.target);
        let n = y.len();
        let tree_spec = TreeSpec {
            max_depth: spec.max_depth,
            ..TreeSpec::default()
        };
        let mean_y = y.sum() / n as f64;
        let base_score = match task {
            Task::Regression => mean_y,
            Task::Classification { .. } => {
                let p = mean_y.clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
        };
        let mut raw = Array1::from_elem(n, base_score);
        let mut trees = Vec::with_capacity(spec.n_trees);
        let rows: Vec<usize> = (0..n).collect();
        for _ in 0..spec.n_trees {
            let tree = match task {
                Task::Regression => {
                    let residual = &y - &raw;
                    CartTree::grow(x, residual.view(), rows.clone(), &tree_spec, SplitCriterion::Variance, &|r| {
                        super::tree::mean_of(residual.view(), r)
                    })
                }
                Task::Classification { .. } => {
                    let prob = raw.mapv(sigmoid);
                    let residual = &y - &prob;
                    let newton = |r: &[usize]| {
                        let num: f64 = r.iter().map(|&i| residual[i]).sum();
                        let den: f64 = r.iter().map(|&i| prob[i] * (1.0 - prob[i])).sum();
                        num / den.max(1e-12)
                    };
                    CartTree::grow(x, residual.view(), rows.clone(), &tree_spec, SplitCriterion::Variance, &newton)
                }
            };
            for (i, row) in x.axis_iter(Axis(0)).enumerate() {
                raw[i] += spec.learning_rate * tree.predict_row(row);
            }
            trees.push(tree);
        }
        Ok(GradientBoosting {
            base_score,
            learning_rate: spec.learning_rate,
            trees,
            n_features: x.ncols(),
            task,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Prediction using only the first `n_trees` trees.
    pub fn predict_staged(&self, x: ArrayView2<f64>, n_trees: usize) -> Array1<f64> {
        let trees = &self.trees[..n_trees.min(self.trees.len())];
        x.axis_iter(Axis(0))
            .map(|row| {
                let raw = self.base_score
                    + self.learning_rate * trees.iter().map(|t| t.predict_row(row)).sum::<f64>();
                match self.task {
                    Task::Regression => raw,
                    Task::Classification { .. } => sigmoid(raw),
                }
            })
            .collect()
    }
}

impl Predictor for GradientBoosting {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.predict_staged(x, self.trees.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_friedman, generate_heart_like};

    #[test]
    fn zero_trees_predicts_base_score() {
        let d = generate_friedman(50, 0, 0).unwrap();
        let m = GradientBoosting::fit(&d, &GbmSpec { n_trees: 0, ..Default::default() }, Task::Regression).unwrap();
        let mean = d.target.sum() / 50.0;
        assert!(m.predict(d.features.values()).unwrap().iter().all(|v| (v - mean).abs() < 1e-12));

        let h = generate_heart_like(100, 0).unwrap();
        let m = GradientBoosting::fit(&h, &GbmSpec { n_trees: 0, ..Default::default() }, Task::Classification { class: 1 })
            .unwrap();
        let frac = h.target.sum() / 100.0;
        assert!(m.predict(h.features.values()).unwrap().iter().all(|v| (v - frac).abs() < 1e-9));
    }

    fn squared_loss(p: &Array1<f64>, y: &Array1<f64>) -> f64 {
        p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn log_loss(p: &Array1<f64>, y: &Array1<f64>) -> f64 {
        p.iter()
            .zip(y.iter())
            .map(|(p, y)| -(y * p.max(1e-300).ln() + (1.0 - y) * (1.0 - p).max(1e-300).ln()))
            .sum()
    }

    #[test]
    fn training_loss_non_increasing_in_trees() {
        let d = generate_friedman(120, 2, 6).unwrap();
        let m = GradientBoosting::fit(&d, &GbmSpec { n_trees: 60, ..Default::default() }, Task::Regression).unwrap();
        let x = d.features.values();
        let losses: Vec<f64> = (0..=60).map(|t| squared_loss(&m.predict_staged(x, t), &d.target)).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }

        let h = generate_heart_like(200, 5).unwrap();
        let task = Task::Classification { class: 0 };
        let m = GradientBoosting::fit(&h, &GbmSpec { n_trees: 60, ..Default::default() }, task).unwrap();
        let y = task.training_target(&h.target);
        let x = h.features.values();
        let losses: Vec<f64> = (0..=60).map(|t| log_loss(&m.predict_staged(x, t), &y)).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }
}
