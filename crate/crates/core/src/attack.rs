//! Attack losses, targets, and the configuration/result types shared by both attacks.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::pd::{center, partial_dependence, pd_values, stable_mean, Grid, PdProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Pull the explanation towards a target curve.
    Targeted,
    /// Push the explanation as far as possible from the original one.
    Robustness,
}

impl Strategy {
    /// Centered comparison is the default for robustness checks only.
    pub fn default_centered(self) -> bool {
        matches!(self, Strategy::Robustness)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "targeted" => Ok(Strategy::Targeted),
            "robustness" => Ok(Strategy::Robustness),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

/// What is attacked and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub strategy: Strategy,
    /// Compare mean-centered profiles.
    pub centered: bool,
    /// Columns never modified; always contains the explained column.
    pub constant_columns: BTreeSet<usize>,
    /// Frozen evaluation grid; its column is the explained column.
    pub grid: Grid,
    /// Required for, and only for, targeted attacks.
    pub target: Option<Vec<f64>>,
    pub seed: u64,
    pub max_iterations: usize,
}

impl AttackConfig {
    pub fn robustness(grid: Grid) -> Self {
        let constant_columns = BTreeSet::from([grid.column()]);
        AttackConfig {
            strategy: Strategy::Robustness,
            centered: true,
            constant_columns,
            grid,
            target: None,
            seed: 0,
            max_iterations: 100,
        }
    }

    pub fn targeted(grid: Grid, target: Vec<f64>) -> Self {
        AttackConfig {
            strategy: Strategy::Targeted,
            centered: false,
            target: Some(target),
            ..Self::robustness(grid)
        }
    }

    pub fn with_centered(mut self, centered: bool) -> Self {
        self.centered = centered;
        self
    }

    /// Adds columns to the constant set (the explained column is always kept).
    pub fn with_constant_columns(mut self, columns: impl IntoIterator<Item = usize>) -> Self {
        self.constant_columns.extend(columns);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn explained_column(&self) -> usize {
        self.grid.column()
    }

    /// Per-column flag: true when the column may be modified.
    pub fn free_mask(&self, n_cols: usize) -> Vec<bool> {
        (0..n_cols).map(|j| !self.constant_columns.contains(&j)).collect()
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let c = self.explained_column();
        if c >= data.n_cols() {
            return Err(Error::invalid(format!("explained column {c} out of range")));
        }
        if !self.constant_columns.contains(&c) {
            return Err(Error::invalid("the explained column must be in the constant set"));
        }
        if let Some(&j) = self.constant_columns.iter().find(|&&j| j >= data.n_cols()) {
            return Err(Error::invalid(format!("constant column {j} out of range")));
        }
        for j in data.categorical_columns() {
            if !self.constant_columns.contains(&j) {
                return Err(Error::invalid(format!(
                    "categorical column {} must be held constant",
                    data.column_names()[j]
                )));
            }
        }
        match (self.strategy, &self.target) {
            (Strategy::Targeted, None) => Err(Error::invalid("targeted attack needs a target")),
            (Strategy::Robustness, Some(_)) => Err(Error::invalid("robustness check takes no target")),
            (Strategy::Targeted, Some(t)) if t.len() != self.grid.len() => Err(Error::ShapeMismatch(format!(
                "target has {} values for {} grid points",
                t.len(),
                self.grid.len()
            ))),
            (Strategy::Targeted, Some(t)) if t.iter().any(|v| !v.is_finite()) => {
                Err(Error::invalid("target values must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Mean squared difference `(1/I) Σ (a_i - b_i)²`.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "distance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(squared_distance(a, b))
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    stable_mean(&sq)
}

/// The attack loss with its reference curve (target, or original profile)
/// resolved once.
pub struct AttackObjective<'a, P: Predictor + ?Sized> {
    model: &'a P,
    config: &'a AttackConfig,
    reference: Vec<f64>,
}

impl<'a, P: Predictor + ?Sized> AttackObjective<'a, P> {
    pub fn new(model: &'a P, config: &'a AttackConfig, x_prime: &Dataset) -> Result<Self> {
        config.validate(x_prime)?;
        crate::models::check_width(model.n_features(), x_prime.values())?;
        let reference = match config.strategy {
            Strategy::Targeted => config.target.clone().expect("validated"),
            Strategy::Robustness => {
                let values = pd_values(model, x_prime.values(), &config.grid);
                if config.centered {
                    center(&values)
                } else {
                    values
                }
            }
        };
        Ok(AttackObjective {
            model,
            config,
            reference,
        })
    }

    pub fn model(&self) -> &'a P {
        self.model
    }

    pub fn config(&self) -> &'a AttackConfig {
        self.config
    }

    /// The curve the (possibly centered) profile is compared with.
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn sign(&self) -> f64 {
        match self.config.strategy {
            Strategy::Targeted => 1.0,
            Strategy::Robustness => -1.0,
        }
    }

    /// Loss from already computed PD values.
    pub fn loss_from_values(&self, values: &[f64]) -> f64 {
        let compared = if self.config.centered {
            center(values)
        } else {
            values.to_vec()
        };
        self.sign() * squared_distance(&compared, &self.reference)
    }

    pub fn loss(&self, x: ArrayView2<f64>) -> f64 {
        self.loss_from_values(&pd_values(self.model, x, &self.config.grid))
    }
}

/// Targeted: `‖PD(X) − T‖`; robustness: `−‖PD(X) − PD(X′)‖`; centered profiles
/// are compared when `config.centered` is set.
pub fn attack_loss<P: Predictor + ?Sized>(
    x: &Dataset,
    model: &P,
    config: &AttackConfig,
    x_prime: &Dataset,
) -> Result<f64> {
    if x.values().dim() != x_prime.values().dim() {
        return Err(Error::ShapeMismatch("X and X' differ in shape".into()));
    }
    Ok(AttackObjective::new(model, config, x_prime)?.loss(x.values()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    IncreasingRamp,
    DecreasingRamp,
    Constant,
    FromFile(std::path::PathBuf),
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increasing-ramp" | "increasing" => Ok(TargetKind::IncreasingRamp),
            "decreasing-ramp" | "decreasing" => Ok(TargetKind::DecreasingRamp),
            "constant" => Ok(TargetKind::Constant),
            other => Err(Error::invalid(format!("unknown target kind {other:?}"))),
        }
    }
}

/// Target curve over the grid, in centered-profile units. Ramps are affine in
/// z and span `[-amplitude/2, amplitude/2]`.
pub fn build_target(kind: &TargetKind, grid: &Grid, amplitude: f64) -> Result<Vec<f64>> {
    if !amplitude.is_finite() {
        return Err(Error::invalid("amplitude must be finite"));
    }
    let z = grid.points();
    let (lo, hi) = (z[0], z[z.len() - 1]);
    let ramp = |sign: f64| -> Vec<f64> {
        z.iter()
            .map(|&v| sign * amplitude * ((v - lo) / (hi - lo) - 0.5))
            .collect()
    };
    match kind {
        TargetKind::IncreasingRamp => Ok(ramp(1.0)),
        TargetKind::DecreasingRamp => Ok(ramp(-1.0)),
        TargetKind::Constant => Ok(vec![0.0; z.len()]),
        TargetKind::FromFile(path) => read_target_file(path, grid),
    }
}

/// Shifts a centered target to the level of `profile`, for comparison with
/// non-centered PD values.
pub fn anchor_target(target: &[f64], profile: &PdProfile) -> Vec<f64> {
    let level = profile.mean();
    target.iter().map(|t| t + level).collect()
}

/// Reads a `z,target` CSV whose z column must match the grid.
pub fn read_target_file(path: &Path, grid: &Grid) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines.next().ok_or_else(|| Error::invalid("empty target file"))?;
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let parse = |cell: Option<&str>, column: &str| -> Result<f64> {
            let cell = cell.unwrap_or("").trim();
            cell.parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                row: row + 1,
                column: column.into(),
                message: format!("cannot parse {cell:?} as a number"),
            })
        };
        let mut cells = line.split(',');
        let z = parse(cells.next(), "z")?;
        let t = parse(cells.next(), "target")?;
        out.push((z, t));
    }
    if out.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "target file has {} rows for {} grid points",
            out.len(),
            grid.len()
        )));
    }
    for ((z, _), g) in out.iter().zip(grid.points()) {
        if (z - g).abs() > 1e-9 * g.abs().max(1.0) {
            return Err(Error::invalid(format!("target z {z} does not match grid point {g}")));
        }
    }
    Ok(out.into_iter().map(|(_, t)| t).collect())
}

/// Outcome of one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub poisoned: Dataset,
    /// Best loss after each iteration; entry 0 is the loss at initialization.
    pub loss_trace: Vec<f64>,
    pub profile_before: PdProfile,
    pub profile_after: PdProfile,
    pub final_loss: f64,
    pub strategy: Strategy,
    pub centered: bool,
    pub target: Option<Vec<f64>>,
}

/// Raw and scaled distance between centered profiles before and after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub raw: f64,
    pub scaled: f64,
    pub scale: f64,
}

impl AttackResult {
    pub(crate) fn assemble<P: Predictor + ?Sized>(
        model: &P,
        x_prime: &Dataset,
        config: &AttackConfig,
        poisoned: Dataset,
        loss_trace: Vec<f64>,
        final_loss: f64,
    ) -> Result<Self> {
        Ok(AttackResult {
            profile_before: partial_dependence(model, x_prime, &config.grid)?,
            profile_after: partial_dependence(model, &poisoned, &config.grid)?,
            poisoned,
            loss_trace,
            final_loss,
            strategy: config.strategy,
            centered: config.centered,
            target: config.target.clone(),
        })
    }

    /// `‖PD̄(X) − PD̄(X′)‖`, the robustness measure reported by experiments.
    pub fn centered_distance(&self) -> f64 {
        squared_distance(&self.profile_after.centered_values, &self.profile_before.centered_values)
    }

    pub fn distance_report(&self, scale: f64) -> DistanceReport {
        let raw = self.centered_distance();
        DistanceReport {
            raw,
            scaled: raw * scale,
            scale,
        }
    }

    /// `|mean(PD after) − mean(PD before)|`: how far the profile moved vertically.
    pub fn level_shift(&self) -> f64 {
        (self.profile_after.mean() - self.profile_before.mean()).abs()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
