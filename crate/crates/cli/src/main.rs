mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pdpoison::attack::{anchor_target, build_target, read_target_file, TargetKind};
use pdpoison::data::{generate_friedman, generate_heart_like, load_csv, LabeledData};
use pdpoison::harness::{emit_profiles, run_experiment, ExperimentSpec, DEFAULT_HISTOGRAM_BINS};
use pdpoison::models::{ForestSpec, GbmSpec, KnnSpec, MlpSpec, TreeSpec};
use pdpoison::plot::{line_chart, Series, ORIGINAL_COLOR};
use pdpoison::{
    build_grid, fit, genetic_attack, gradient_attack, partial_dependence, AttackConfig, GeneticParams,
    GradientParams, Model, ModelSpec, Strategy, Task,
};

const OUTPUT_DIR_ENV: &str = "PDPOISON_OUTPUT_DIR";

/// Partial dependence explanations and data-poisoning attacks against them.
///
/// Every subcommand accepts `--config FILE`: a JSON object keyed by long flag
/// names. Flags given on the command line override the file.
#[derive(Debug, Parser)]
#[command(name = "pdpoison", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset to CSV.
    #[command(args_override_self = true)]
    Generate(GenerateArgs),
    /// Train a model on a CSV dataset and save it as JSON.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Compute a partial dependence profile.
    #[command(args_override_self = true)]
    Pd(PdArgs),
    /// Poison a dataset so that a model's explanation changes.
    #[command(args_override_self = true)]
    Attack(AttackArgs),
    /// Run an experiment described by a JSON file.
    #[command(args_override_self = true)]
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Friedman,
    HeartLike,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "friedman")]
    kind: Generator,
    #[arg(long, default_value_t = 500)]
    rows: usize,
    /// Extra uniform noise columns (friedman only).
    #[arg(long, default_value_t = 0)]
    noise: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Dataset location and schema shared by the data-reading subcommands.
#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Target column, split off before any model sees the features.
    #[arg(long, default_value = "y")]
    target: String,
    /// Comma-separated categorical columns.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> Result<LabeledData> {
        Ok(load_csv(&self.data, &self.target, &self.categorical)?)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Linear,
    Tree,
    Forest,
    Gbm,
    Knn,
    Mlp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskKind,
    /// Class whose probability a classifier outputs.
    #[arg(long, default_value_t = 0)]
    class: i64,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

impl FitArgs {
    fn spec(&self) -> ModelSpec {
        match self.family {
            Family::Linear => ModelSpec::Linear,
            Family::Tree => {
                let d = TreeSpec::default();
                ModelSpec::Tree(TreeSpec { max_depth: self.max_depth.unwrap_or(d.max_depth), ..d })
            }
            Family::Forest => {
                let d = ForestSpec::default();
                ModelSpec::Forest(ForestSpec {
                    n_trees: self.n_trees.unwrap_or(d.n_trees),
                    max_depth: self.max_depth.unwrap_or(d.max_depth),
                })
            }
            Family::Gbm => {
                let d = GbmSpec::default();
                ModelSpec::Gbm(GbmSpec {
                    n_trees: self.n_trees.unwrap_or(d.n_trees),
                    max_depth: self.max_depth.unwrap_or(d.max_depth),
                    learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                })
            }
            Family::Knn => ModelSpec::Knn(KnnSpec { k: self.k.unwrap_or(KnnSpec::default().k) }),
            Family::Mlp => {
                let d = MlpSpec::default();
                ModelSpec::Mlp(MlpSpec {
                    layers: self.layers.unwrap_or(d.layers),
                    neurons: self.neurons.unwrap_or(d.neurons),
                    epochs: self.epochs.unwrap_or(d.epochs),
                    learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                    batch_size: self.batch_size.or(d.batch_size),
                })
            }
        }
    }

    fn task(&self) -> Task {
        match self.task {
            TaskKind::Regression => Task::Regression,
            TaskKind::Classification => Task::Classification { class: self.class },
        }
    }
}

#[derive(Debug, Args)]
struct PdArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Explained column.
    #[arg(long)]
    column: String,
    #[arg(long, default_value_t = pdpoison::pd::DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Profile CSV (`z,pd,pd_centered`).
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG plot of the profile.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackKind {
    Genetic,
    Gradient,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Targeted,
    Robustness,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(value_enum)]
    kind: AttackKind,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    column: String,
    #[arg(long, value_enum, default_value = "robustness")]
    strategy: StrategyArg,
    /// Compare centered profiles; defaults to true for robustness, false for targeted.
    #[arg(long)]
    centered: Option<bool>,
    /// Target shape: increasing-ramp, decreasing-ramp or constant.
    #[arg(long, default_value = "decreasing-ramp")]
    target_kind: String,
    /// Target read from a `z,target` CSV instead of a built-in shape.
    #[arg(long)]
    target_file: Option<PathBuf>,
    /// Ramp height in units of the explained profile.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Comma-separated columns kept fixed, or `all`. The explained and
    /// categorical columns are always fixed.
    #[arg(long, value_delimiter = ',')]
    constant_cols: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
    #[arg(long, default_value_t = pdpoison::pd::DEFAULT_GRID_POINTS)]
    grid_points: usize,

    #[arg(long, default_value_t = GeneticParams::default().pop_count)]
    pop_count: usize,
    #[arg(long, default_value_t = GeneticParams::default().crossover_ratio)]
    crossover_ratio: f64,
    #[arg(long, default_value_t = GeneticParams::default().std_ratio)]
    std_ratio: f64,
    #[arg(long, default_value_t = GeneticParams::default().init_std_multiplier)]
    init_std_multiplier: f64,
    #[arg(long, action = clap::ArgAction::Set, default_value_t = GeneticParams::default().mutation_with_constraints)]
    mutation_with_constraints: bool,
    #[arg(long, default_value_t = GeneticParams::default().elitism_count)]
    elitism_count: usize,

    #[arg(long, default_value_t = GradientParams::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = GradientParams::default().init_noise_ratio)]
    init_noise_ratio: f64,

    #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
    bins: usize,
    /// Directory for poisoned.csv, result.json and plots.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment spec JSON.
    spec: PathBuf,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let data = match args.kind {
        Generator::Friedman => generate_friedman(args.rows, args.noise, args.seed)?,
        Generator::HeartLike => {
            if args.noise > 0 {
                bail!("--noise applies to friedman data only");
            }
            generate_heart_like(args.rows, args.seed)?
        }
    };
    data.write_csv(&args.out)?;
    Ok(())
}

fn fit_model(args: &FitArgs) -> Result<()> {
    let data = args.data.load()?;
    let model = fit(&data, &args.spec(), args.task(), args.seed)?;
    model.save(&args.out)?;
    Ok(())
}

fn load_model(path: &Path, n_features: usize) -> Result<Model> {
    use pdpoison::Predictor;
    let model = Model::load(path)?;
    if model.n_features() != n_features {
        bail!(
            "model {} expects {} features but the data has {n_features}",
            path.display(),
            model.n_features()
        );
    }
    Ok(model)
}

fn column_of(data: &LabeledData, name: &str) -> Result<usize> {
    data.features
        .column_index(name)
        .ok_or_else(|| anyhow!("unknown column {name:?}; known: {}", data.features.column_names().join(", ")))
}

fn pd(args: &PdArgs) -> Result<()> {
    let data = args.data.load()?;
    let model = load_model(&args.model, data.features.n_cols())?;
    let grid = build_grid(&data.features, column_of(&data, &args.column)?, args.grid_points)?;
    let profile = partial_dependence(&model, &data.features, &grid)?;
    profile.write_csv(&args.out)?;
    if let Some(svg) = &args.svg {
        let chart = line_chart(
            "Partial dependence",
            &args.column,
            grid.points(),
            &[Series { label: "pd", color: ORIGINAL_COLOR, values: &profile.values }],
        );
        std::fs::write(svg, chart).with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(())
}

fn attack(args: &AttackArgs) -> Result<()> {
    let data = args.data.load()?;
    let features = &data.features;
    let model = load_model(&args.model, features.n_cols())?;
    let differentiable = match args.kind {
        AttackKind::Gradient => Some(model.differentiable().map_err(|_| {
            anyhow!(
                "`attack gradient` needs a differentiable model (linear or mlp) but {} is a {} model; \
                 use `attack genetic` instead",
                args.model.display(),
                model.variant()
            )
        })?),
        AttackKind::Genetic => None,
    };
    let explained = column_of(&data, &args.column)?;
    let grid = build_grid(features, explained, args.grid_points)?;
    let strategy = match args.strategy {
        StrategyArg::Targeted => Strategy::Targeted,
        StrategyArg::Robustness => Strategy::Robustness,
    };
    let centered = args.centered.unwrap_or(strategy.default_centered());

    let constant: Vec<usize> = if args.constant_cols.iter().any(|c| c == "all") {
        (0..features.n_cols()).collect()
    } else {
        features.resolve_columns(&args.constant_cols)?
    };
    let config = match strategy {
        Strategy::Robustness => AttackConfig::robustness(grid),
        Strategy::Targeted => {
            let target = match &args.target_file {
                Some(path) => read_target_file(path, &grid)?,
                None => {
                    let ramp = build_target(&args.target_kind.parse::<TargetKind>()?, &grid, args.amplitude)?;
                    if centered {
                        ramp
                    } else {
                        anchor_target(&ramp, &partial_dependence(&model, features, &grid)?)
                    }
                }
            };
            AttackConfig::targeted(grid, target)
        }
    }
    .with_centered(centered)
    .with_constant_columns(constant)
    .with_constant_columns(features.categorical_columns())
    .with_seed(args.seed)
    .with_max_iterations(args.max_iterations);

    let result = match differentiable {
        None => {
            let params = GeneticParams {
                pop_count: args.pop_count,
                crossover_ratio: args.crossover_ratio,
                std_ratio: args.std_ratio,
                init_std_multiplier: args.init_std_multiplier,
                mutation_with_constraints: args.mutation_with_constraints,
                elitism_count: args.elitism_count,
            };
            genetic_attack(&model, features, &config, &params)?
        }
        Some(model) => {
            let params = GradientParams {
                learning_rate: args.learning_rate,
                init_noise_ratio: args.init_noise_ratio,
                ..Default::default()
            };
            gradient_attack(model, features, &config, &params)?
        }
    };

    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    LabeledData::new(result.poisoned.clone(), data.target.clone(), data.target_name.clone())?
        .write_csv(out_dir.join("poisoned.csv"))?;
    let json = out_dir.join("result.json");
    std::fs::write(&json, result.to_json()?).with_context(|| format!("writing {}", json.display()))?;
    emit_profiles(&result, features, &out_dir, args.bins)?;
    println!(
        "initial loss {} final loss {} centered distance {}",
        result.loss_trace[0],
        result.final_loss,
        result.centered_distance()
    );
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if let Some(dir) = &args.output_dir {
        spec.output_dir = Some(dir.clone());
    }
    if spec.output_dir.is_none() {
        spec.output_dir = Some(PathBuf::from("."));
    }
    if let Some(r) = args.repetitions {
        spec.repetitions = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(m) = args.max_iterations {
        spec.max_iterations = m;
    }
    let report = run_experiment(&spec)?;
    print!("{}", report.to_csv());
    for row in report.failures() {
        eprintln!(
            "cell {} / {} {} failed: {}",
            row.task,
            row.model,
            row.complexity,
            row.error.as_deref().unwrap_or("")
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit_model(a),
        Command::Pd(a) => pd(a),
        Command::Attack(a) => attack(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn main() -> ExitCode {
    let argv = match config::expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let cli = Cli::parse_from(argv);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
