//! Tabular datasets: the table poisoned by the attacks, plus generators and CSV I/O.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// Integer-coded categories; values must be whole numbers.
    Categorical,
}

/// An N×P table of finite reals with named, typed columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    values: Array2<f64>,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
}

impl Dataset {
    pub fn new(
        values: Array2<f64>,
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let (n, p) = values.dim();
        if n == 0 || p == 0 {
            return Err(Error::invalid(format!("dataset must be non-empty, got {n}x{p}")));
        }
        if column_names.len() != p || column_kinds.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "{p} columns but {} names and {} kinds",
                column_names.len(),
                column_kinds.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate column name {name:?}")));
            }
        }
        let ds = Dataset {
            values,
            column_names,
            column_kinds,
        };
        ds.check_values(ds.values.view())?;
        Ok(ds)
    }

    /// All columns continuous.
    pub fn continuous(values: Array2<f64>, column_names: Vec<String>) -> Result<Self> {
        let kinds = vec![ColumnKind::Continuous; column_names.len()];
        Self::new(values, column_names, kinds)
    }

    /// Same metadata, new values of identical shape.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {:?}, got {:?}",
                self.values.dim(),
                values.dim()
            )));
        }
        self.check_values(values.view())?;
        Ok(Dataset {
            values,
            column_names: self.column_names.clone(),
            column_kinds: self.column_kinds.clone(),
        })
    }

    fn check_values(&self, values: ArrayView2<f64>) -> Result<()> {
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite value {v} at row {i}, column {}",
                    self.column_names[j]
                )));
            }
            if self.column_kinds[j] == ColumnKind::Categorical && v.fract() != 0.0 {
                return Err(Error::invalid(format!(
                    "categorical column {} holds non-integer {v} at row {i}",
                    self.column_names[j]
                )));
            }
        }
        Ok(())
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    pub fn categorical_columns(&self) -> Vec<usize> {
        (0..self.n_cols())
            .filter(|&j| self.column_kinds[j] == ColumnKind::Categorical)
            .collect()
    }

    /// Resolves a list of column names to indices.
    pub fn resolve_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                self.column_index(n)
                    .ok_or_else(|| Error::invalid(format!("unknown column {n:?}")))
            })
            .collect()
    }

    pub fn stats(&self) -> ColumnStats {
        column_stats(self)
    }

    /// Writes the table (no target) as CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_table(path.as_ref(), &self.column_names, self.values.view(), None)
    }
}

/// Per-column summary statistics. `sd` is the population standard deviation (divisor N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

pub fn column_stats(data: &Dataset) -> ColumnStats {
    stats_of(data.values())
}

pub(crate) fn stats_of(values: ArrayView2<f64>) -> ColumnStats {
    let p = values.ncols();
    let mut stats = ColumnStats {
        min: Vec::with_capacity(p),
        max: Vec::with_capacity(p),
        mean: Vec::with_capacity(p),
        sd: Vec::with_capacity(p),
    };
    for col in values.axis_iter(Axis(1)) {
        let mut sorted: Vec<f64> = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let min = sorted[0];
        let max = sorted[sorted.len() - 1];
        // Sorted accumulation keeps the statistics independent of row order.
        let mean = (crate::pd::pairwise_sum(&sorted) / n).clamp(min, max);
        let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
        sq.sort_by(f64::total_cmp);
        let sd = if min == max {
            0.0
        } else {
            (crate::pd::pairwise_sum(&sq) / n).sqrt()
        };
        stats.min.push(min);
        stats.max.push(max);
        stats.mean.push(mean);
        stats.sd.push(sd);
    }
    stats
}

/// Features plus a target vector (regression value or class label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledData {
    pub features: Dataset,
    pub target: Array1<f64>,
    pub target_name: String,
}

impl LabeledData {
    pub fn new(features: Dataset, target: Array1<f64>, target_name: impl Into<String>) -> Result<Self> {
        if target.len() != features.n_rows() {
            return Err(Error::ShapeMismatch(format!(
                "target has {} entries for {} rows",
                target.len(),
                features.n_rows()
            )));
        }
        if let Some(v) = target.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite target value {v}")));
        }
        Ok(LabeledData {
            features,
            target,
            target_name: target_name.into(),
        })
    }

    /// Writes features followed by the target column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut names = self.features.column_names().to_vec();
        names.push(self.target_name.clone());
        write_table(
            path.as_ref(),
            &names,
            self.features.values(),
            Some(self.target.view()),
        )
    }
}

fn write_table(
    path: &Path,
    names: &[String],
    values: ArrayView2<f64>,
    target: Option<ArrayView1<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(names).map_err(|e| csv_io(path, e))?;
    let mut record = Vec::with_capacity(names.len());
    for (i, row) in values.axis_iter(Axis(0)).enumerate() {
        record.clear();
        record.extend(row.iter().map(|v| v.to_string()));
        if let Some(t) = target {
            record.push(t[i].to_string());
        }
        w.write_record(&record).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv {
            path: path.to_path_buf(),
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

/// Reads a numeric CSV with a header row. The target column is split off; the
/// named categorical columns are flagged and must hold whole numbers.
pub fn load_csv<S: AsRef<str>>(
    path: impl AsRef<Path>,
    target_column: &str,
    categorical_columns: &[S],
) -> Result<LabeledData> {
    let path = path.as_ref();
    let csv_err = |row: usize, column: &str, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(0, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(csv_err(0, "", "missing header row".into()));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if h.is_empty() {
            return Err(csv_err(0, h, "empty column name".into()));
        }
        if !seen.insert(h.as_str()) {
            return Err(csv_err(0, h, "duplicate column name".into()));
        }
    }
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| csv_err(0, target_column, "unknown target column".into()))?;
    for c in categorical_columns {
        let c = c.as_ref();
        if !header.iter().any(|h| h == c) || c == target_column {
            return Err(csv_err(0, c, "unknown categorical column".into()));
        }
    }

    let p = header.len() - 1;
    let mut features = Vec::new();
    let mut target = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_err(row, "", e.to_string()))?;
        if record.len() != header.len() {
            return Err(csv_err(
                row,
                "",
                format!("expected {} cells, found {}", header.len(), record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(row, &header[j], format!("cannot parse {cell:?} as a number")))?;
            if !v.is_finite() {
                return Err(csv_err(row, &header[j], format!("non-finite value {cell:?}")));
            }
            if j == target_idx {
                target.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if target.is_empty() {
        return Err(csv_err(1, "", "no data rows".into()));
    }
    let n = target.len();
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let kinds = names
        .iter()
        .map(|name| {
            if categorical_columns.iter().any(|c| c.as_ref() == name) {
                ColumnKind::Categorical
            } else {
                ColumnKind::Continuous
            }
        })
        .collect();
    let values = Array2::from_shape_vec((n, p), features).expect("row-major cells");
    let features = Dataset::new(values, names, kinds)?;
    LabeledData::new(features, Array1::from(target), target_column)
}

/// The Friedman benchmark target on the first five inputs.
pub fn friedman_target(x: ArrayView1<f64>) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5) * (x[2] - 0.5)
        + 10.0 * x[3]
        + 5.0 * x[4]
}

/// Friedman regression data: five informative U[0,1] inputs (X1..X5) plus
/// `n_noise_extra` uninformative U[0,1] columns (N1..Nk).
pub fn generate_friedman(n_rows: usize, n_noise_extra: usize, seed: u64) -> Result<LabeledData> {
    if n_rows == 0 {
        return Err(Error::invalid("n_rows must be at least 1"));
    }
    let p = 5 + n_noise_extra;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array2::from_shape_simple_fn((n_rows, p), || rng.random::<f64>());
    let target = values.axis_iter(Axis(0)).map(friedman_target).collect();
    let names = (1..=5)
        .map(|i| format!("X{i}"))
        .chain((1..=n_noise_extra).map(|i| format!("N{i}")))
        .collect();
    LabeledData::new(Dataset::continuous(values, names)?, target, "y")
}

/// Column layout of the heart-disease classification table.
pub const HEART_COLUMNS: [(&str, ColumnKind); 13] = [
    ("age", ColumnKind::Continuous),
    ("sex", ColumnKind::Categorical),
    ("cp", ColumnKind::Categorical),
    ("trestbps", ColumnKind::Continuous),
    ("chol", ColumnKind::Continuous),
    ("fbs", ColumnKind::Categorical),
    ("restecg", ColumnKind::Categorical),
    ("thalach", ColumnKind::Continuous),
    ("exang", ColumnKind::Categorical),
    ("oldpeak", ColumnKind::Continuous),
    ("slope", ColumnKind::Categorical),
    ("ca", ColumnKind::Categorical),
    ("thal", ColumnKind::Categorical),
];

/// Synthetic stand-in for the 303-row heart-disease table: 5 continuous and 8
/// categorical columns with realistic marginals and a roughly balanced binary
/// `output` target drawn from a logistic model.
pub fn generate_heart_like(n_rows: usize, seed: u64) -> Result<LabeledData> {
    if n_rows == 0 {
        return Err(Error::invalid("n_rows must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64| {
        let v: f64 = rng.sample(Normal::new(mean, sd).expect("valid sd"));
        v.clamp(lo, hi).round()
    };
    let categorical = |rng: &mut ChaCha8Rng, probs: &[f64]| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k as f64;
            }
        }
        (probs.len() - 1) as f64
    };
    let exp = Exp::new(1.0 / 1.04).expect("positive rate");

    let mut values = Array2::zeros((n_rows, HEART_COLUMNS.len()));
    let mut target = Array1::zeros(n_rows);
    for i in 0..n_rows {
        let age = normal(&mut rng, 54.0, 9.0, 29.0, 77.0);
        let sex = categorical(&mut rng, &[0.32, 0.68]);
        let cp = categorical(&mut rng, &[0.47, 0.17, 0.29, 0.07]);
        let trestbps = normal(&mut rng, 131.0, 17.5, 94.0, 200.0);
        let chol = normal(&mut rng, 246.0, 52.0, 126.0, 564.0);
        let fbs = categorical(&mut rng, &[0.85, 0.15]);
        let restecg = categorical(&mut rng, &[0.49, 0.50, 0.01]);
        let thalach = normal(&mut rng, 150.0 - 0.5 * (age - 54.0), 22.0, 71.0, 202.0);
        let exang = categorical(&mut rng, &[0.67, 0.33]);
        let oldpeak = (rng.sample::<f64, _>(exp) * 10.0).round().min(62.0) / 10.0;
        let slope = categorical(&mut rng, &[0.07, 0.46, 0.47]);
        let ca = categorical(&mut rng, &[0.58, 0.21, 0.13, 0.07, 0.01]);
        let thal = categorical(&mut rng, &[0.01, 0.06, 0.55, 0.38]);

        let logit = 0.3 - 0.04 * (age - 54.0) - 1.2 * sex
            + if cp > 0.0 { 0.8 } else { 0.0 }
            - 0.015 * (trestbps - 131.0)
            - 0.004 * (chol - 246.0)
            + 0.035 * (thalach - 150.0)
            - 1.0 * exang
            - 0.7 * (oldpeak - 1.0)
            + if slope == 2.0 { 0.6 } else { 0.0 }
            - 0.8 * ca
            - if thal == 3.0 { 0.9 } else { 0.0 }
            + 1.1;
        let p = 1.0 / (1.0 + (-logit).exp());
        target[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };

        let row = [
            age, sex, cp, trestbps, chol, fbs, restecg, thalach, exang, oldpeak, slope, ca, thal,
        ];
        values.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    let names = HEART_COLUMNS.iter().map(|(n, _)| n.to_string()).collect();
    let kinds = HEART_COLUMNS.iter().map(|(_, k)| *k).collect();
    LabeledData::new(Dataset::new(values, names, kinds)?, target, "output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn friedman_formula_points() {
        let y = friedman_target(array![0.5, 0.5, 0.5, 0.5, 0.5].view());
        assert!((y - (10.0 * (PI / 4.0).sin() + 7.5)).abs() < 1e-12);
        assert!((y - 14.571_067_811_865_476).abs() < 1e-12);
        assert_eq!(friedman_target(array![0.0, 0.0, 0.5, 0.0, 0.0].view()), 0.0);
    }

    #[test]
    fn friedman_shape_range_and_target() {
        let d = generate_friedman(200, 8, 3).unwrap();
        assert_eq!(d.features.n_cols(), 13);
        assert_eq!(d.features.column_names()[5], "N1");
        assert_eq!(d.features.column_names()[12], "N8");
        assert!(d.features.values().iter().all(|v| (0.0..=1.0).contains(v)));
        for (row, y) in d.features.values().axis_iter(Axis(0)).zip(d.target.iter()) {
            assert!((friedman_target(row) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn friedman_seeding() {
        let a = generate_friedman(50, 2, 11).unwrap();
        let b = generate_friedman(50, 2, 11).unwrap();
        let c = generate_friedman(50, 2, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features.values(), c.features.values());
        assert!(generate_friedman(0, 0, 0).is_err());
    }

    #[test]
    fn heart_like_shape() {
        let d = generate_heart_like(303, 0).unwrap();
        assert_eq!(d.features.n_rows(), 303);
        assert_eq!(d.features.n_cols(), 13);
        assert_eq!(d.features.categorical_columns().len(), 8);
        let positive = d.target.sum() / 303.0;
        assert!((0.3..0.7).contains(&positive), "class balance {positive}");
    }

    #[test]
    fn stats_examples() {
        let d = Dataset::continuous(array![[1.0, 0.0], [1.0, 2.0], [1.0, 1.0]], vec!["a".into(), "b".into()])
            .unwrap();
        let s = column_stats(&d);
        assert_eq!((s.min[0], s.max[0], s.mean[0], s.sd[0]), (1.0, 1.0, 1.0, 0.0));
        let d2 = Dataset::continuous(array![[0.0], [2.0]], vec!["b".into()]).unwrap();
        let s2 = column_stats(&d2);
        assert_eq!(s2.mean[0], 1.0);
        assert_eq!(s2.sd[0], 1.0);
    }

    #[test]
    fn stats_permutation_invariant() {
        let d = generate_friedman(64, 1, 5).unwrap().features;
        let mut rows: Vec<usize> = (0..64).collect();
        rows.reverse();
        rows.swap(3, 40);
        let permuted = d.with_values(d.values().select(Axis(0), &rows)).unwrap();
        assert_eq!(column_stats(&d), column_stats(&permuted));
    }

    #[test]
    fn dataset_invariants() {
        let names = vec!["a".to_string(), "a".to_string()];
        assert!(Dataset::continuous(array![[1.0, 2.0]], names).is_err());
        assert!(Dataset::continuous(array![[f64::NAN]], vec!["a".into()]).is_err());
        assert!(Dataset::new(array![[1.5]], vec!["a".into()], vec![ColumnKind::Categorical]).is_err());
        assert!(Dataset::continuous(Array2::zeros((0, 1)), vec!["a".into()]).is_err());
    }

    #[test]
    fn load_minimal_csv() {
        let f = write_tmp("a,b,y\n1,2,3\n");
        let d = load_csv(f.path(), "y", &[] as &[&str]).unwrap();
        assert_eq!(d.features.values(), array![[1.0, 2.0]]);
        assert_eq!(d.target, array![3.0]);
        assert_eq!(d.features.column_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn load_csv_errors() {
        let f = write_tmp("a,b,y\n1,abc,3\n");
        let err = load_csv(f.path(), "y", &[] as &[&str]).unwrap_err();
        match err {
            Error::Csv { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other}"),
        }
        let f = write_tmp("a,a,y\n1,2,3\n");
        assert!(matches!(load_csv(f.path(), "y", &[] as &[&str]), Err(Error::Csv { .. })));
        let f = write_tmp("a,b,y\n1,2,3\n");
        assert!(load_csv(f.path(), "z", &[] as &[&str]).is_err());
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "y", &[] as &[&str]),
            Err(Error::Io { .. })
        ));
        let f = write_tmp("");
        assert!(load_csv(f.path(), "y", &[] as &[&str]).is_err());
    }

    #[test]
    fn heart_like_csv_reload() {
        let d = generate_heart_like(303, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heart.csv");
        d.write_csv(&path).unwrap();
        let cats: Vec<&str> = HEART_COLUMNS
            .iter()
            .filter(|(_, k)| *k == ColumnKind::Categorical)
            .map(|(n, _)| *n)
            .collect();
        let back = load_csv(&path, "output", &cats).unwrap();
        assert_eq!(back.features.n_rows(), 303);
        assert_eq!(back.features.n_cols(), 13);
        assert_eq!(back.features.categorical_columns().len(), 8);
        assert_eq!(back, d);
    }

    proptest::proptest! {
        #[test]
        fn csv_roundtrip_is_value_identical(seed in 0u64..1000, rows in 1usize..30, noise in 0usize..3) {
            let d = generate_friedman(rows, noise, seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            d.write_csv(&path).unwrap();
            let back = load_csv(&path, "y", &[] as &[&str]).unwrap();
            proptest::prop_assert_eq!(back, d);
        }
    }
}
