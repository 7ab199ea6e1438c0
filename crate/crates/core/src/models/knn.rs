use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Predictor, Task};
use crate::data::LabeledData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnSpec {
    pub k: usize,
}

impl Default for KnnSpec {
    fn default() -> Self {
        KnnSpec { k: 5 }
    }
}

impl KnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(())
    }
}

/// k-nearest neighbours on raw (unstandardized) Euclidean distance. Distance
/// ties are broken by training-row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KNearest {
    points: Array2<f64>,
    targets: Array1<f64>,
    k: usize,
    pub task: Task,
}

impl KNearest {
    pub fn fit(data: &LabeledData, spec: &KnnSpec, task: Task) -> Result<Self> {
        spec.validate()?;
        Ok(KNearest {
            points: data.features.values().to_owned(),
            targets: task.training_target(&data.target),
            k: spec.k.min(data.target.len()),
            task,
        })
    }
}

impl Predictor for KNearest {
    fn n_features(&self) -> usize {
        self.points.ncols()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.points.nrows());
        x.axis_iter(Axis(0))
            .map(|q| {
                dist.clear();
                dist.extend(self.points.axis_iter(Axis(0)).enumerate().map(|(i, p)| {
                    let d: f64 = p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, i)
                }));
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < dist.len() {
                    dist.select_nth_unstable_by(self.k - 1, cmp);
                }
                let mut nearest: Vec<usize> = dist[..self.k].iter().map(|&(_, i)| i).collect();
                nearest.sort_unstable();
                nearest.iter().map(|&i| self.targets[i]).sum::<f64>() / self.k as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_friedman;

    #[test]
    fn one_neighbour_returns_own_target() {
        let d = generate_friedman(40, 0, 3).unwrap();
        let m = KNearest::fit(&d, &KnnSpec { k: 1 }, Task::Regression).unwrap();
        assert_eq!(m.predict(d.features.values()).unwrap(), d.target);
    }

    #[test]
    fn k_larger_than_data_averages_everything() {
        let d = generate_friedman(7, 0, 3).unwrap();
        let m = KNearest::fit(&d, &KnnSpec { k: 50 }, Task::Regression).unwrap();
        let p = m.predict(d.features.values().slice(ndarray::s![0..1, ..])).unwrap();
        assert!((p[0] - d.target.sum() / 7.0).abs() < 1e-12);
    }
}
