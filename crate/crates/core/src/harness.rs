//! Experiment runner: fit every model on every task, attack each one R times,
//! and aggregate the scaled distances into a CSV report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{anchor_target, build_target, AttackConfig, AttackResult, Strategy, TargetKind};
use crate::data::{generate_friedman, generate_heart_like, load_csv, Dataset, LabeledData};
use crate::error::{Error, Result};
use crate::genetic::{genetic_attack, GeneticParams};
use crate::gradient::{gradient_attack, GradientParams};
use crate::models::{fit, Model, ModelSpec, Task};
use crate::pd::{build_grid, stable_mean, DEFAULT_GRID_POINTS};
use crate::plot::{histogram, line_chart, Series, ORIGINAL_COLOR, POISONED_COLOR, TARGET_COLOR};

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// Where a task's rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Friedman {
        #[serde(default = "default_rows")]
        n_rows: usize,
        #[serde(default)]
        n_noise: usize,
        #[serde(default)]
        seed: u64,
    },
    HeartLike {
        #[serde(default = "default_heart_rows")]
        n_rows: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        target_column: String,
        #[serde(default)]
        categorical: Vec<String>,
    },
}

fn default_rows() -> usize {
    500
}

fn default_heart_rows() -> usize {
    303
}

fn default_scale() -> f64 {
    1.0
}

impl DataSource {
    pub fn load(&self) -> Result<LabeledData> {
        match self {
            DataSource::Friedman { n_rows, n_noise, seed } => generate_friedman(*n_rows, *n_noise, *seed),
            DataSource::HeartLike { n_rows, seed } => generate_heart_like(*n_rows, *seed),
            DataSource::Csv { path, target_column, categorical } => load_csv(path, target_column, categorical),
        }
    }

    /// Regression for friedman, classification for heart-like; CSV tasks must say.
    fn default_task(&self) -> Option<Task> {
        match self {
            DataSource::Friedman { .. } => Some(Task::Regression),
            DataSource::HeartLike { .. } => Some(Task::classification()),
            DataSource::Csv { .. } => None,
        }
    }
}

/// One dataset with the column to explain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub data: DataSource,
    pub explained_column: String,
    /// Defaults to the explained column plus every categorical column.
    #[serde(default)]
    pub constant_columns: Option<Vec<String>>,
    #[serde(default)]
    pub task: Option<Task>,
    /// Factor applied to every reported distance.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Genetic(GeneticParams),
    Gradient(GradientParams),
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Genetic(_) => "genetic",
            AttackSpec::Gradient(_) => "gradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: TargetKind,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_repetitions() -> usize {
    6
}

fn default_iterations() -> usize {
    100
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

/// A grid of (task, model) cells, each attacked `repetitions` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub tasks: Vec<TaskSpec>,
    pub models: Vec<ModelSpec>,
    pub attack: AttackSpec,
    pub strategy: Strategy,
    /// Defaults to centered for robustness, raw for targeted.
    #[serde(default)]
    pub centered: Option<bool>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Model fits use this seed; run r of a cell uses `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write per-run profile, SVG and histogram files.
    #[serde(default = "default_true")]
    pub emit_runs: bool,
}

fn default_true() -> bool {
    true
}

impl ExperimentSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.tasks.is_empty() || self.models.is_empty() {
            return Err(Error::invalid("experiment needs at least one task and one model"));
        }
        for m in &self.models {
            m.validate()?;
            if matches!(self.attack, AttackSpec::Gradient(_)) && !m.is_differentiable() {
                return Err(Error::invalid(format!(
                    "gradient attack cannot target {} models; use the genetic attack instead",
                    m.family()
                )));
            }
        }
        match &self.attack {
            AttackSpec::Genetic(p) => p.validate()?,
            AttackSpec::Gradient(p) => p.validate(self.strategy)?,
        }
        if (self.strategy == Strategy::Targeted) != self.target.is_some() {
            return Err(Error::invalid("a target is required for, and only for, targeted attacks"));
        }
        for t in &self.tasks {
            if !(t.scale.is_finite() && t.scale > 0.0) {
                return Err(Error::invalid(format!("task {}: scale must be positive", t.name)));
            }
            if t.task.is_none() && t.data.default_task().is_none() {
                return Err(Error::invalid(format!("task {}: CSV tasks must set \"task\"", t.name)));
            }
        }
        Ok(())
    }

    pub fn centered(&self) -> bool {
        self.centered.unwrap_or(self.strategy.default_centered())
    }
}

/// Aggregate over the R runs of one (task, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub model: String,
    pub complexity: String,
    pub attack: String,
    pub strategy: Strategy,
    /// NaN when the cell failed.
    pub mean_scaled_distance: f64,
    pub sd_scaled_distance: f64,
    pub scale: f64,
    pub runs: usize,
    pub per_run: Vec<f64>,
    pub run_dirs: Vec<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub const CSV_HEADER: &'static str =
        "task,model,complexity,attack,strategy,mean_scaled_distance,sd_scaled_distance,scale,runs";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let strategy = match r.strategy {
                Strategy::Targeted => "targeted",
                Strategy::Robustness => "robustness",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.task, r.model, r.complexity, r.attack, strategy, r.mean_scaled_distance, r.sd_scaled_distance,
                r.scale, r.runs
            ));
        }
        out
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

/// Mean and sample sd (n − 1 denominator); a single value has sd 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mean = stable_mean(values);
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = stable_mean(&sq) * values.len() as f64 / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Attack config for one task; `target` is already in the space the loss compares.
pub fn attack_config_for(
    spec: &ExperimentSpec,
    task: &TaskSpec,
    model: &Model,
    features: &Dataset,
) -> Result<AttackConfig> {
    let explained = features
        .column_index(&task.explained_column)
        .ok_or_else(|| Error::invalid(format!("unknown explained column {:?}", task.explained_column)))?;
    let grid = build_grid(features, explained, spec.grid_points)?;
    let constant: Vec<usize> = match &task.constant_columns {
        Some(names) => features.resolve_columns(names)?,
        None => features.categorical_columns(),
    };
    let centered = spec.centered();
    let config = match (&spec.strategy, &spec.target) {
        (Strategy::Targeted, Some(t)) => {
            let mut target = build_target(&t.kind, &grid, t.amplitude)?;
            if !centered {
                let before = crate::pd::partial_dependence(model, features, &grid)?;
                target = anchor_target(&target, &before);
            }
            AttackConfig::targeted(grid, target)
        }
        (Strategy::Robustness, _) => AttackConfig::robustness(grid),
        (Strategy::Targeted, None) => return Err(Error::invalid("targeted attack without target")),
    };
    Ok(config
        .with_centered(centered)
        .with_constant_columns(constant)
        .with_max_iterations(spec.max_iterations))
}

/// Runs one attack of the configured kind.
pub fn run_attack(model: &Model, features: &Dataset, config: &AttackConfig, attack: &AttackSpec) -> Result<AttackResult> {
    match attack {
        AttackSpec::Genetic(p) => genetic_attack(model, features, config, p),
        AttackSpec::Gradient(p) => gradient_attack(model.differentiable()?, features, config, p),
    }
}

/// The reported per-run value: centered-profile distance for robustness,
/// final loss for targeted attacks.
pub fn run_value(result: &AttackResult, scale: f64) -> f64 {
    match result.strategy {
        Strategy::Robustness => result.distance_report(scale).scaled,
        Strategy::Targeted => result.final_loss * scale,
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn run_cell(
    spec: &ExperimentSpec,
    task: &TaskSpec,
    data: &LabeledData,
    model_spec: &ModelSpec,
    out_dir: Option<&Path>,
) -> Result<(Vec<f64>, Vec<PathBuf>)> {
    let kind = task.task.or(task.data.default_task()).expect("validated");
    let model = fit(data, model_spec, kind, spec.seed)?;
    let base = attack_config_for(spec, task, &model, &data.features)?;
    let cell_dir = out_dir.map(|d| {
        d.join(sanitize(&task.name))
            .join(format!("{}_{}", model_spec.family(), sanitize(&model_spec.complexity())))
    });
    let runs: Vec<Result<(f64, Option<PathBuf>)>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|r| {
            let config = base.clone().with_seed(spec.seed.wrapping_add(r as u64));
            let result = run_attack(&model, &data.features, &config, &spec.attack)?;
            let dir = match (&cell_dir, spec.emit_runs) {
                (Some(d), true) => {
                    let run_dir = d.join(format!("run_{r}"));
                    emit_profiles(&result, &data.features, &run_dir, DEFAULT_HISTOGRAM_BINS)?;
                    Some(run_dir)
                }
                _ => None,
            };
            Ok((run_value(&result, task.scale), dir))
        })
        .collect();
    let mut values = Vec::with_capacity(runs.len());
    let mut dirs = Vec::new();
    for run in runs {
        let (v, d) = run?;
        values.push(v);
        dirs.extend(d);
    }
    Ok((values, dirs))
}

/// Runs every (task, model) cell. A failing cell yields a row with NaN
/// statistics and its error message; the remaining cells still run. Writes
/// `report.csv` (and `report.json`) when an output directory is configured.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let out_dir = spec.output_dir.as_deref();
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rows = Vec::with_capacity(spec.tasks.len() * spec.models.len());
    for task in &spec.tasks {
        let data = task.data.load();
        for model_spec in &spec.models {
            let outcome = data
                .as_ref()
                .map_err(|e| Error::invalid(e.to_string()))
                .and_then(|d| run_cell(spec, task, d, model_spec, out_dir));
            let (mean, sd, runs, per_run, run_dirs, error) = match outcome {
                Ok((values, dirs)) => {
                    let (m, s) = mean_sd(&values);
                    (m, s, values.len(), values, dirs, None)
                }
                Err(e) => (f64::NAN, f64::NAN, 0, Vec::new(), Vec::new(), Some(e.to_string())),
            };
            rows.push(ReportRow {
                task: task.name.clone(),
                model: model_spec.family().to_string(),
                complexity: model_spec.complexity(),
                attack: spec.attack.name().to_string(),
                strategy: spec.strategy,
                mean_scaled_distance: mean,
                sd_scaled_distance: sd,
                scale: task.scale,
                runs,
                per_run,
                run_dirs,
                error,
            });
        }
    }
    let report = ExperimentReport { rows };
    if let Some(d) = out_dir {
        let csv = d.join("report.csv");
        std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = d.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&json, e))?;
    }
    Ok(report)
}

/// Files written by [`emit_profiles`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub profile_csv: PathBuf,
    pub svg: PathBuf,
    pub histogram_csv: PathBuf,
}

/// Writes `profile.csv`, `profile.svg` and `histograms.csv` into `dir`.
///
/// Profiles are shown in the space the attack compared: centered values for
/// centered attacks, raw values otherwise. The histogram CSV has exactly
/// `bins` rows per column, with bin edges spanning both datasets.
pub fn emit_profiles(result: &AttackResult, original: &Dataset, dir: &Path, bins: usize) -> Result<EmittedFiles> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (before, after) = if result.centered {
        (&result.profile_before.centered_values, &result.profile_after.centered_values)
    } else {
        (&result.profile_before.values, &result.profile_after.values)
    };
    let z = result.profile_before.grid.points();

    let profile_csv = dir.join("profile.csv");
    let mut csv = String::from("z,pd_before,pd_after");
    csv.push_str(if result.target.is_some() { ",target\n" } else { "\n" });
    for (k, zk) in z.iter().enumerate() {
        csv.push_str(&format!("{zk},{},{}", before[k], after[k]));
        match &result.target {
            Some(t) => csv.push_str(&format!(",{}\n", t[k])),
            None => csv.push('\n'),
        }
    }
    std::fs::write(&profile_csv, csv).map_err(|e| Error::io(&profile_csv, e))?;

    let mut series = vec![
        Series { label: "original", color: ORIGINAL_COLOR, values: before },
        Series { label: "poisoned", color: POISONED_COLOR, values: after },
    ];
    if let Some(t) = &result.target {
        series.push(Series { label: "target", color: TARGET_COLOR, values: t });
    }
    let column = &original.column_names()[result.profile_before.grid.column()];
    let title = if result.centered { "Centered partial dependence" } else { "Partial dependence" };
    let svg = dir.join("profile.svg");
    std::fs::write(&svg, line_chart(title, column, z, &series)).map_err(|e| Error::io(&svg, e))?;

    let histogram_csv = dir.join("histograms.csv");
    let mut hist = String::from("column,bin,lower,upper,before,after\n");
    for (j, name) in original.column_names().iter().enumerate() {
        let a = original.column(j);
        let b = result.poisoned.column(j);
        let lo = a.iter().chain(b.iter()).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
        let (edges, counts_a) = histogram(a, lo, hi, bins);
        let (_, counts_b) = histogram(b, lo, hi, bins);
        for k in 0..bins {
            hist.push_str(&format!(
                "{name},{k},{},{},{},{}\n",
                edges[k],
                edges[k + 1],
                counts_a[k],
                counts_b[k]
            ));
        }
    }
    std::fs::write(&histogram_csv, hist).map_err(|e| Error::io(&histogram_csv, e))?;
    Ok(EmittedFiles { profile_csv, svg, histogram_csv })
}
