use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Predictor, Task};
use crate::data::LabeledData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    /// Variance reduction (regression).
    Variance,
    /// Gini impurity on the 0/1 class-of-interest indicator.
    Gini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            max_depth: 6,
            min_samples_leaf: 2,
        }
    }
}

impl TreeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid("tree needs max_depth >= 1 and min_samples_leaf >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub(crate) enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A binary CART tree; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct CartTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl CartTree {
    /// Grows a tree on `rows` of `x` (repeats allowed, as in bootstrap samples).
    /// `leaf_value` maps the rows reaching a leaf to its output.
    pub(crate) fn grow(
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        rows: Vec<usize>,
        spec: &TreeSpec,
        criterion: SplitCriterion,
        leaf_value: &dyn Fn(&[usize]) -> f64,
    ) -> Self {
        let mut tree = CartTree {
            nodes: Vec::new(),
            n_features: x.ncols(),
        };
        let mut builder = Builder {
            x,
            y,
            spec,
            criterion,
            leaf_value,
            tree: &mut tree,
        };
        builder.build(rows, 0);
        tree
    }

    pub(crate) fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        match row.as_slice() {
            Some(values) => self.predict_slice(values),
            None => self.predict_slice(&row.to_vec()),
        }
    }

    pub(crate) fn predict_slice(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub(crate) fn n_features(&self) -> usize {
        self.n_features
    }

    pub(crate) fn depth(&self) -> usize {
        fn depth_of(nodes: &[Node], idx: usize) -> usize {
            match nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + depth_of(nodes, left).max(depth_of(nodes, right)),
            }
        }
        depth_of(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    spec: &'a TreeSpec,
    criterion: SplitCriterion,
    leaf_value: &'a dyn Fn(&[usize]) -> f64,
    tree: &'a mut CartTree,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let idx = self.tree.nodes.len();
        self.tree.nodes.push(Node::Leaf {
            value: (self.leaf_value)(&rows),
        });
        if depth >= self.spec.max_depth || rows.len() < 2 * self.spec.min_samples_leaf {
            return idx;
        }
        let (sum, sum_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| {
            let v = self.y[r];
            (s + v, q + v * v)
        });
        let parent = self.impurity(rows.len() as f64, sum, sum_sq);
        if parent <= 1e-12 * rows.len() as f64 {
            return idx;
        }
        let Some(split) = self.best_split(&rows) else {
            return idx;
        };
        if split.impurity >= parent - 1e-12 * parent.max(1.0) {
            return idx;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[[r, split.feature]] <= split.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.tree.nodes[idx] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        idx
    }

    /// Total (count-weighted) impurity of a node.
    fn impurity(&self, n: f64, sum: f64, sum_sq: f64) -> f64 {
        match self.criterion {
            SplitCriterion::Variance => (sum_sq - sum * sum / n).max(0.0),
            SplitCriterion::Gini => {
                let p = sum / n;
                n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
            }
        }
    }

    fn best_split(&self, rows: &[usize]) -> Option<Split> {
        let n = rows.len();
        let min_leaf = self.spec.min_samples_leaf;
        let total: (f64, f64) = rows.iter().fold((0.0, 0.0), |(s, q), &r| {
            let v = self.y[r];
            (s + v, q + v * v)
        });
        let mut best: Option<Split> = None;
        let mut sorted = rows.to_vec();
        for feature in 0..self.x.ncols() {
            let col = self.x.column(feature);
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let (mut ls, mut lq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let v = self.y[sorted[k]];
                ls += v;
                lq += v * v;
                let nl = k + 1;
                let (a, b) = (col[sorted[k]], col[sorted[k + 1]]);
                if nl < min_leaf || n - nl < min_leaf || a == b {
                    continue;
                }
                let imp = self.impurity(nl as f64, ls, lq)
                    + self.impurity((n - nl) as f64, total.0 - ls, total.1 - lq);
                if best.as_ref().is_none_or(|s| imp < s.impurity) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split {
                        feature,
                        threshold,
                        impurity: imp,
                    });
                }
            }
        }
        best
    }
}

pub(crate) fn mean_of(y: ArrayView1<f64>, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
}

/// A single CART tree: variance splitting for regression, Gini for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    tree: CartTree,
    task: Task,
}

impl DecisionTree {
    pub fn fit(data: &LabeledData, spec: &TreeSpec, task: Task) -> Result<Self> {
        spec.validate()?;
        let y = task.training_target(&data.target);
        let rows = (0..y.len()).collect();
        Ok(DecisionTree {
            tree: grow_for_task(data.features.values(), y.view(), rows, spec, task),
            task,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }
}

pub(crate) fn grow_for_task(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    rows: Vec<usize>,
    spec: &TreeSpec,
    task: Task,
) -> CartTree {
    let criterion = if task.is_classification() {
        SplitCriterion::Gini
    } else {
        SplitCriterion::Variance
    };
    CartTree::grow(x, y, rows, spec, criterion, &|r| mean_of(y, r))
}

impl Predictor for DecisionTree {
    fn n_features(&self) -> usize {
        self.tree.n_features()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.axis_iter(Axis(0)).map(|r| self.tree.predict_row(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_friedman, Dataset};
    use ndarray::array;

    #[test]
    fn step_function_is_learned_exactly() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]];
        let y = array![1.0, 1.0, 1.0, 7.0, 7.0, 7.0];
        let d = LabeledData::new(Dataset::continuous(x.clone(), vec!["a".into()]).unwrap(), y.clone(), "y").unwrap();
        let t = DecisionTree::fit(&d, &TreeSpec::default(), Task::Regression).unwrap();
        assert_eq!(t.predict(x.view()).unwrap(), y);
        // midpoint threshold between 2 and 3
        assert_eq!(t.predict(array![[2.49], [2.51]].view()).unwrap(), array![1.0, 7.0]);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn depth_is_bounded_and_leaves_hold_two_rows() {
        let d = generate_friedman(100, 0, 4).unwrap();
        for depth in 1..6 {
            let spec = TreeSpec { max_depth: depth, min_samples_leaf: 2 };
            let t = DecisionTree::fit(&d, &spec, Task::Regression).unwrap();
            assert!(t.depth() <= depth);
        }
        let deep = TreeSpec { max_depth: 50, min_samples_leaf: 2 };
        let t = DecisionTree::fit(&d, &deep, Task::Regression).unwrap();
        // no leaf can isolate a single training row, so training error stays positive
        let p = t.predict(d.features.values()).unwrap();
        assert!(p.iter().zip(d.target.iter()).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn classification_leaves_are_class_fractions() {
        let d = crate::data::generate_heart_like(200, 1).unwrap();
        let t = DecisionTree::fit(&d, &TreeSpec { max_depth: 3, min_samples_leaf: 5 }, Task::Classification { class: 1 })
            .unwrap();
        let p = t.predict(d.features.values()).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let mean_p = p.sum() / 200.0;
        let mean_y = d.target.sum() / 200.0;
        assert!((mean_p - mean_y).abs() < 1e-12);
    }
}
