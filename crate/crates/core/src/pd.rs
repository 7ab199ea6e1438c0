//! Partial dependence on a fixed grid.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::models::Predictor;

pub const DEFAULT_GRID_POINTS: usize = 40;

/// Points at which the explained column is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    column: usize,
    points: Vec<f64>,
}

impl Grid {
    pub fn new(column: usize, points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("grid needs at least 2 points"));
        }
        if points.iter().any(|z| !z.is_finite()) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid points must be finite and strictly increasing"));
        }
        Ok(Grid { column, points })
    }

    pub fn column(&self) -> usize {
        self.column
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `n_points` equidistant values spanning the observed range of `column`.
pub fn build_grid(data: &Dataset, column: usize, n_points: usize) -> Result<Grid> {
    if column >= data.n_cols() {
        return Err(Error::invalid(format!("column {column} out of range")));
    }
    if data.column_kinds()[column] != ColumnKind::Continuous {
        return Err(Error::invalid(format!(
            "column {} is categorical",
            data.column_names()[column]
        )));
    }
    if n_points < 2 {
        return Err(Error::invalid("grid needs at least 2 points"));
    }
    let col = data.column(column);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo >= hi {
        return Err(Error::invalid(format!(
            "column {} is constant; no range to span",
            data.column_names()[column]
        )));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    let mut points: Vec<f64> = (0..n_points).map(|k| lo + step * k as f64).collect();
    points[n_points - 1] = hi;
    Grid::new(column, points)
}

/// PD values on a grid plus their mean-centered counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdProfile {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub centered_values: Vec<f64>,
}

impl PdProfile {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Self {
        let centered_values = center(&values);
        PdProfile {
            grid,
            values,
            centered_values,
        }
    }

    pub fn mean(&self) -> f64 {
        stable_mean(&self.values)
    }

    /// CSV with columns `z,pd,pd_centered`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("z,pd,pd_centered\n");
        for ((z, v), c) in self
            .grid
            .points()
            .iter()
            .zip(&self.values)
            .zip(&self.centered_values)
        {
            out.push_str(&format!("{z},{v},{c}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn center(values: &[f64]) -> Vec<f64> {
    let m = stable_mean(values);
    values.iter().map(|v| v - m).collect()
}

/// Pairwise (cascade) summation; rounding error grows with log n.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean that depends only on the multiset of values: the input is sorted before
/// pairwise summation, so any permutation gives the same bits.
pub fn stable_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    pairwise_sum(&sorted) / values.len() as f64
}

/// Copy of `x` with `column` overwritten by `z`.
pub(crate) fn substituted(x: ArrayView2<f64>, column: usize, z: f64) -> Array2<f64> {
    let mut out = x.to_owned();
    out.column_mut(column).fill(z);
    out
}

/// PD values for raw data; grid points are evaluated in parallel but every
/// value is computed independently, so results do not depend on worker count.
pub(crate) fn pd_values<P: Predictor + ?Sized>(model: &P, x: ArrayView2<f64>, grid: &Grid) -> Vec<f64> {
    grid.points()
        .par_iter()
        .map(|&z| {
            let preds = model.predict_rows(substituted(x, grid.column(), z).view());
            stable_mean(preds.as_slice().expect("contiguous predictions"))
        })
        .collect()
}

/// PD of `model` over `data` at every grid point. `data` is not modified.
pub fn partial_dependence<P: Predictor + ?Sized>(model: &P, data: &Dataset, grid: &Grid) -> Result<PdProfile> {
    if grid.column() >= data.n_cols() {
        return Err(Error::invalid(format!("grid column {} out of range", grid.column())));
    }
    crate::models::check_width(model.n_features(), data.values())?;
    Ok(PdProfile::from_values(grid.clone(), pd_values(model, data.values(), grid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearModel;
    use ndarray::{array, Axis};

    #[test]
    fn equidistant_grid() {
        let d = Dataset::continuous(array![[0.0], [0.3], [1.0]], vec!["a".into()]).unwrap();
        let g = build_grid(&d, 0, 5).unwrap();
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn grid_endpoints_match_range() {
        let d = crate::data::generate_friedman(37, 0, 2).unwrap().features;
        let g = build_grid(&d, 2, 40).unwrap();
        let col = d.column(2);
        assert_eq!(g.points()[0], col.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(g.points()[39], col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn degenerate_grids_rejected() {
        let d = Dataset::continuous(array![[2.0, 1.0], [2.0, 3.0]], vec!["a".into(), "b".into()]).unwrap();
        assert!(build_grid(&d, 0, 5).is_err());
        assert!(build_grid(&d, 1, 1).is_err());
        assert!(Grid::new(0, vec![1.0, 1.0]).is_err());
        let c = Dataset::new(array![[0.0], [1.0]], vec!["c".into()], vec![ColumnKind::Categorical]).unwrap();
        assert!(build_grid(&c, 0, 3).is_err());
    }

    #[test]
    fn constant_model_profile() {
        let d = crate::data::generate_friedman(20, 0, 1).unwrap().features;
        let m = LinearModel::new(vec![0.0; 5], 3.5);
        let p = partial_dependence(&m, &d, &build_grid(&d, 0, 7).unwrap()).unwrap();
        assert!(p.values.iter().all(|&v| v == 3.5));
        assert!(p.centered_values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_linear_point() {
        // f(x) = 2 x1 + x2 on rows (0,0), (1,2); at x1 = 0.5 the PD is 2.0
        let d = Dataset::continuous(array![[0.0, 0.0], [1.0, 2.0]], vec!["x1".into(), "x2".into()]).unwrap();
        let m = LinearModel::new(vec![2.0, 1.0], 0.0);
        let p = partial_dependence(&m, &d, &Grid::new(0, vec![0.0, 0.5]).unwrap()).unwrap();
        assert_eq!(p.values[1], 2.0);
    }

    #[test]
    fn centered_values_have_zero_mean() {
        let d = crate::data::generate_friedman(50, 1, 3).unwrap();
        let m = LinearModel::fit(&d, crate::models::Task::Regression).unwrap();
        let p = partial_dependence(&m, &d.features, &build_grid(&d.features, 1, 13).unwrap()).unwrap();
        assert!(p.centered_values.iter().sum::<f64>().abs() / 13.0 < 1e-12);
    }

    #[test]
    fn input_dataset_untouched() {
        let d = crate::data::generate_friedman(10, 0, 0).unwrap().features;
        let before = d.clone();
        let m = LinearModel::new(vec![1.0; 5], 0.0);
        partial_dependence(&m, &d, &build_grid(&d, 0, 4).unwrap()).unwrap();
        assert_eq!(d, before);
    }

    #[test]
    fn stable_mean_ignores_order() {
        let v: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 * 1e-3 + 1e8).collect();
        let mut r = v.clone();
        r.reverse();
        assert_eq!(stable_mean(&v).to_bits(), stable_mean(&r).to_bits());
    }

    #[test]
    fn duplicated_rows_leave_profile_unchanged() {
        let d = crate::data::generate_friedman(30, 0, 5).unwrap();
        let m = crate::models::fit(
            &d,
            &crate::models::ModelSpec::Gbm(Default::default()),
            crate::models::Task::Regression,
            0,
        )
        .unwrap();
        let doubled = ndarray::concatenate(Axis(0), &[d.features.values(), d.features.values()]).unwrap();
        let dd = Dataset::continuous(doubled, d.features.column_names().to_vec()).unwrap();
        let g = build_grid(&d.features, 0, 9).unwrap();
        let a = partial_dependence(&m, &d.features, &g).unwrap();
        let b = partial_dependence(&m, &dd, &g).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
