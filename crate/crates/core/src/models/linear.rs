use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Differentiable, Predictor, Task};
use crate::data::LabeledData;
use crate::error::{Error, Result};

const RIDGE: f64 = 1e-8;
const MAX_NEWTON_STEPS: usize = 100;

/// Least-squares linear regression, or logistic regression for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub task: Task,
    /// Set when the normal equations were singular and the ridge fallback was used.
    pub ridge_applied: bool,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>, intercept: f64) -> Self {
        LinearModel {
            coefficients,
            intercept,
            task: Task::Regression,
            ridge_applied: false,
        }
    }

    pub fn fit(data: &LabeledData, task: Task) -> Result<Self> {
        let x = data.features.values();
        let y = task.training_target(&data.target);
        let design = design_matrix(x);
        match task {
            Task::Regression => {
                let rhs = design.transpose() * DVector::from_iterator(y.len(), y.iter().copied());
                let (beta, ridge_applied) = solve_normal(design.transpose() * &design, rhs)?;
                Ok(Self::from_beta(beta, task, ridge_applied))
            }
            Task::Classification { .. } => fit_logistic(&design, &y, task),
        }
    }

    fn from_beta(beta: DVector<f64>, task: Task, ridge_applied: bool) -> Self {
        LinearModel {
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            task,
            ridge_applied,
        }
    }

    fn linear_part(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let beta = Array1::from(self.coefficients.clone());
        x.dot(&beta) + self.intercept
    }
}

fn design_matrix(x: ArrayView2<f64>) -> DMatrix<f64> {
    let (n, p) = x.dim();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] })
}

/// Solves `gram · beta = rhs`, falling back to ridge regularization when `gram` is
/// numerically singular.
fn solve_normal(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let sv = gram.singular_values();
    let max = sv.max();
    let min = sv.min();
    let singular = !(min > max * 1e-13) || max == 0.0;
    let gram = if singular {
        let k = gram.nrows();
        gram + DMatrix::identity(k, k) * RIDGE
    } else {
        gram
    };
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateFit("normal equations not positive definite".into()))?;
    Ok((chol.solve(&rhs), singular))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Newton-Raphson (IRLS) on the logistic log-likelihood.
fn fit_logistic(design: &DMatrix<f64>, y: &Array1<f64>, task: Task) -> Result<LinearModel> {
    let (n, k) = design.shape();
    let mut beta = DVector::zeros(k);
    let mut ridge_applied = false;
    for _ in 0..MAX_NEWTON_STEPS {
        let eta = design * &beta;
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let row = design.row(i);
            grad += row.transpose() * (y[i] - p);
            let w = (p * (1.0 - p)).max(1e-12);
            hess += row.transpose() * row * w;
        }
        let (step, ridged) = solve_normal(hess, grad)?;
        ridge_applied |= ridged;
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::DegenerateFit("logistic regression diverged".into()));
    }
    Ok(LinearModel::from_beta(beta, task, ridge_applied))
}

impl Predictor for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let eta = self.linear_part(x);
        match self.task {
            Task::Regression => eta,
            Task::Classification { .. } => eta.mapv(sigmoid),
        }
    }
}

impl Differentiable for LinearModel {
    fn input_gradient_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let beta = Array1::from(self.coefficients.clone());
        let mut g = Array2::zeros(x.dim());
        match self.task {
            Task::Regression => g.axis_iter_mut(Axis(0)).for_each(|mut r| r.assign(&beta)),
            Task::Classification { .. } => {
                let p = self.predict_rows(x);
                for (mut r, p) in g.axis_iter_mut(Axis(0)).zip(p.iter()) {
                    r.assign(&(&beta * (p * (1.0 - p))));
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use ndarray::{array, Array2};

    fn noiseless() -> LabeledData {
        // y = 3 x1 - 2 x2 + 1 on 10 rows of full rank
        let x: Array2<f64> = Array2::from_shape_fn((10, 2), |(i, j)| {
            let i = i as f64;
            if j == 0 { i * 0.7 - 2.0 } else { (i * i) * 0.13 - i * 0.5 }
        });
        let y = x.column(0).mapv(|a| 3.0 * a) - x.column(1).mapv(|b| 2.0 * b) + 1.0;
        LabeledData::new(Dataset::continuous(x, vec!["x1".into(), "x2".into()]).unwrap(), y, "y").unwrap()
    }

    #[test]
    fn recovers_noiseless_coefficients() {
        let m = LinearModel::fit(&noiseless(), Task::Regression).unwrap();
        assert!((m.coefficients[0] - 3.0).abs() < 1e-8);
        assert!((m.coefficients[1] + 2.0).abs() < 1e-8);
        assert!((m.intercept - 1.0).abs() < 1e-8);
        assert!(!m.ridge_applied);
    }

    #[test]
    fn gradient_is_coefficients() {
        let m = LinearModel::new(vec![3.0, -2.0], 0.5);
        let g = m.input_gradient(array![[1.0, 2.0], [-4.0, 0.0]].view()).unwrap();
        assert_eq!(g, array![[3.0, -2.0], [3.0, -2.0]]);
    }

    #[test]
    fn singular_design_uses_ridge() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]];
        let y = array![1.0, 2.0, 3.0, 4.0];
        let d = LabeledData::new(Dataset::continuous(x.clone(), vec!["a".into(), "b".into()]).unwrap(), y.clone(), "y")
            .unwrap();
        let m = LinearModel::fit(&d, Task::Regression).unwrap();
        assert!(m.ridge_applied);
        let p = m.predict(x.view()).unwrap();
        for (a, b) in p.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn logistic_probabilities_and_gradient() {
        let d = crate::data::generate_heart_like(150, 2).unwrap();
        let m = LinearModel::fit(&d, Task::classification()).unwrap();
        let x = d.features.values();
        let p = m.predict(x).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let g = m.input_gradient(x.slice(ndarray::s![0..3, ..])).unwrap();
        let h = 1e-5;
        for j in 0..x.ncols() {
            let mut plus = x.slice(ndarray::s![0..1, ..]).to_owned();
            let mut minus = plus.clone();
            plus[[0, j]] += h;
            minus[[0, j]] -= h;
            let fd = (m.predict(plus.view()).unwrap()[0] - m.predict(minus.view()).unwrap()[0]) / (2.0 * h);
            assert!((fd - g[[0, j]]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }
}
