//! Gradient-based data poisoning for models differentiable in their inputs.
//!
//! For a free cell (i, j) the attack-loss gradient is
//!
//! ```text
//! ∂L/∂X[i,j] = s · 2/(N·|Z|) · Σ_z ∂f(X_i with c := z)/∂X[i,j] · d(z)
//! ```
//!
//! where `s` is +1 for targeted and −1 for robustness, and `d(z)` is the gap
//! between the current profile and the reference (target or original profile).
//! With centered profiles the per-z input gradient is replaced by its deviation
//! from the mean over the grid. Entries for the constant columns are zero.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackObjective, AttackResult, Strategy};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Differentiable;
use crate::optim::{Adam, AdamConfig};
use crate::pd::{center, stable_mean, substituted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientParams {
    pub learning_rate: f64,
    /// Initial Gaussian noise sd as a fraction of each free column's sd.
    pub init_noise_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for GradientParams {
    fn default() -> Self {
        GradientParams {
            learning_rate: 0.01,
            init_noise_ratio: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl GradientParams {
    pub fn validate(&self, strategy: Strategy) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.init_noise_ratio >= 0.0 && self.init_noise_ratio.is_finite()) {
            return Err(Error::invalid("init_noise_ratio must be non-negative"));
        }
        if strategy == Strategy::Robustness && self.init_noise_ratio == 0.0 {
            return Err(Error::invalid(
                "robustness check needs init_noise_ratio > 0: at X = X' the loss gradient vanishes",
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Attack loss at `x` and its gradient with respect to every cell of `x`
/// (zero on the constant columns).
pub fn loss_and_gradient<D: Differentiable + ?Sized>(
    objective: &AttackObjective<'_, D>,
    x: ArrayView2<f64>,
) -> (f64, Array2<f64>) {
    let config = objective.config();
    let model = objective.model();
    let grid = &config.grid;
    let (n, p) = x.dim();
    let n_z = grid.len();

    let per_z: Vec<(f64, Array2<f64>)> = grid
        .points()
        .par_iter()
        .map(|&z| {
            let (preds, grad) = model.predict_with_gradient_rows(substituted(x, grid.column(), z).view());
            (stable_mean(preds.as_slice().expect("contiguous predictions")), grad)
        })
        .collect();
    let values: Vec<f64> = per_z.iter().map(|(v, _)| *v).collect();
    let loss = objective.loss_from_values(&values);

    let compared = if config.centered { center(&values) } else { values };
    let gap: Vec<f64> = compared.iter().zip(objective.reference()).map(|(a, b)| a - b).collect();

    let mut total = Array2::zeros((n, p));
    if config.centered {
        let mut mean_grad = Array2::zeros((n, p));
        for (_, g) in &per_z {
            mean_grad += g;
        }
        mean_grad /= n_z as f64;
        for ((_, g), &d) in per_z.iter().zip(&gap) {
            Zip::from(&mut total).and(g).and(&mean_grad).for_each(|t, &g, &m| *t += (g - m) * d);
        }
    } else {
        for ((_, g), &d) in per_z.iter().zip(&gap) {
            total.scaled_add(d, g);
        }
    }
    total *= objective.sign() * 2.0 / (n as f64 * n_z as f64);
    for &j in &config.constant_columns {
        total.column_mut(j).fill(0.0);
    }
    (loss, total)
}

/// Gradient of the targeted loss at `x` (the constant columns get zero).
pub fn grad_targeted<D: Differentiable + ?Sized>(model: &D, x: &Dataset, config: &AttackConfig) -> Result<Array2<f64>> {
    if config.strategy != Strategy::Targeted {
        return Err(Error::invalid("grad_targeted needs a targeted config"));
    }
    let objective = AttackObjective::new(model, config, x)?;
    Ok(loss_and_gradient(&objective, x.values()).1)
}

/// Gradient of the robustness loss at `x` relative to the original `x_prime`.
pub fn grad_robustness<D: Differentiable + ?Sized>(
    model: &D,
    x: &Dataset,
    x_prime: &Dataset,
    config: &AttackConfig,
) -> Result<Array2<f64>> {
    if config.strategy != Strategy::Robustness {
        return Err(Error::invalid("grad_robustness needs a robustness config"));
    }
    if x.values().dim() != x_prime.values().dim() {
        return Err(Error::ShapeMismatch("X and X' differ in shape".into()));
    }
    let objective = AttackObjective::new(model, config, x_prime)?;
    Ok(loss_and_gradient(&objective, x.values()).1)
}

/// X′ plus Gaussian noise with sd `ratio · sd_j` on the free columns.
fn noisy_start<R: Rng>(x_prime: &Dataset, free: &[bool], ratio: f64, rng: &mut R) -> Array2<f64> {
    let sd = x_prime.stats().sd;
    let mut x = x_prime.values().to_owned();
    if ratio == 0.0 {
        return x;
    }
    for mut row in x.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            if free[j] && sd[j] > 0.0 {
                *v += ratio * sd[j] * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    x
}

/// Runs Adam on the attack loss, starting from a noisy copy of X′.
///
/// `loss_trace[0]` is the loss at the noisy start and entry k the loss after k
/// steps. A non-finite loss aborts with [`Error::Divergence`].
pub fn gradient_attack<D: Differentiable + ?Sized>(
    model: &D,
    x_prime: &Dataset,
    config: &AttackConfig,
    params: &GradientParams,
) -> Result<AttackResult> {
    params.validate(config.strategy)?;
    let objective = AttackObjective::new(model, config, x_prime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let free = config.free_mask(x_prime.n_cols());
    let mut x = noisy_start(x_prime, &free, params.init_noise_ratio, &mut rng);

    let mut adam = Adam::new(x.len(), params.adam());
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    for iteration in 0..config.max_iterations {
        let (loss, grad) = loss_and_gradient(&objective, x.view());
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration, loss, trace });
        }
        trace.push(loss);
        adam.step(
            x.as_slice_mut().expect("standard layout"),
            grad.as_slice().expect("standard layout"),
        );
    }
    let final_loss = objective.loss(x.view());
    if !final_loss.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            iteration: config.max_iterations,
            loss: final_loss,
            trace,
        });
    }
    trace.push(final_loss);
    let poisoned = x_prime.with_values(x)?;
    AttackResult::assemble(model, x_prime, config, poisoned, trace, final_loss)
}

/// Central finite-difference gradient of the attack loss, cell by cell.
/// Used as an independent check of [`loss_and_gradient`].
pub fn finite_difference_gradient<D: Differentiable + ?Sized>(
    objective: &AttackObjective<'_, D>,
    x: ArrayView2<f64>,
    h: f64,
) -> Array2<f64> {
    let free = objective.config().free_mask(x.ncols());
    let mut out = Array2::zeros(x.dim());
    let mut probe = x.to_owned();
    for ((i, j), g) in out.indexed_iter_mut() {
        if !free[j] {
            continue;
        }
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + h;
        let up = objective.loss(probe.view());
        probe[[i, j]] = orig - h;
        let down = objective.loss(probe.view());
        probe[[i, j]] = orig;
        *g = (up - down) / (2.0 * h);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{build_target, TargetKind};
    use crate::data::generate_friedman;
    use crate::models::{LinearModel, Mlp, MlpSpec, Task};
    use crate::pd::{build_grid, partial_dependence};

    #[test]
    fn target_met_gives_zero_gradient() {
        let d = generate_friedman(16, 0, 3).unwrap();
        let m = Mlp::fit(&d, &MlpSpec { layers: 2, neurons: 8, epochs: 30, ..Default::default() }, Task::Regression, 1)
            .unwrap();
        let g = build_grid(&d.features, 0, 5).unwrap();
        let profile = partial_dependence(&m, &d.features, &g).unwrap();
        let cfg = AttackConfig::targeted(g, profile.values);
        let grad = grad_targeted(&m, &d.features, &cfg).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_data_gives_zero_robustness_gradient() {
        let d = generate_friedman(16, 0, 3).unwrap();
        let m = LinearModel::new(vec![1.0, -2.0, 0.5, 3.0, 1.0], 0.0);
        let g = build_grid(&d.features, 0, 5).unwrap();
        for centered in [true, false] {
            let cfg = AttackConfig::robustness(g.clone()).with_centered(centered);
            let grad = grad_robustness(&m, &d.features, &d.features, &cfg).unwrap();
            assert!(grad.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_targeted_gradient_closed_form() {
        // cell (i, j) = 2/(N|Z|) · β_j · Σ_z (PD(z) − T(z))
        let d = generate_friedman(12, 1, 5).unwrap().features;
        let beta = vec![1.5, -2.0, 0.5, 3.0, 1.0, -0.25];
        let m = LinearModel::new(beta.clone(), 0.7);
        let g = build_grid(&d, 0, 6).unwrap();
        let t = build_target(&TargetKind::DecreasingRamp, &g, 4.0).unwrap();
        let pd = partial_dependence(&m, &d, &g).unwrap();
        let gap: f64 = pd.values.iter().zip(&t).map(|(a, b)| a - b).sum();
        let cfg = AttackConfig::targeted(g, t);
        let grad = grad_targeted(&m, &d, &cfg).unwrap();
        let objective = AttackObjective::new(&m, &cfg, &d).unwrap();
        let fd = finite_difference_gradient(&objective, d.values(), 1e-5);
        for ((i, j), &v) in grad.indexed_iter() {
            let expected = if j == 0 { 0.0 } else { 2.0 / (12.0 * 6.0) * beta[j] * gap };
            assert!((v - expected).abs() < 1e-12 * expected.abs().max(1.0), "({i},{j}) {v} vs {expected}");
            assert!((v - fd[[i, j]]).abs() < 1e-6 * expected.abs().max(1e-3));
        }
    }

    #[test]
    fn linear_centered_robustness_gradient_is_zero() {
        let d = generate_friedman(12, 1, 5).unwrap().features;
        let other = generate_friedman(12, 1, 6).unwrap().features;
        let m = LinearModel::new(vec![1.5, -2.0, 0.5, 3.0, 1.0, -0.25], 0.7);
        let cfg = AttackConfig::robustness(build_grid(&d, 0, 6).unwrap());
        let grad = grad_robustness(&m, &other, &d, &cfg).unwrap();
        assert!(grad.iter().all(|v| v.abs() < 1e-15), "{grad}");
    }

    #[test]
    fn robustness_needs_noise_and_non_differentiable_is_rejected() {
        let d = generate_friedman(12, 0, 5).unwrap();
        let m = LinearModel::new(vec![1.0; 5], 0.0);
        let cfg = AttackConfig::robustness(build_grid(&d.features, 0, 4).unwrap());
        let params = GradientParams { init_noise_ratio: 0.0, ..Default::default() };
        assert!(gradient_attack(&m, &d.features, &cfg, &params).is_err());

        let tree = crate::models::fit(&d, &crate::models::ModelSpec::Tree(Default::default()), Task::Regression, 0)
            .unwrap();
        assert!(matches!(tree.differentiable(), Err(Error::NonDifferentiable("tree"))));
    }

    #[test]
    fn zero_iterations_returns_noisy_start() {
        let d = generate_friedman(20, 0, 5).unwrap();
        let m = LinearModel::fit(&d, Task::Regression).unwrap();
        let cfg = AttackConfig::robustness(build_grid(&d.features, 0, 4).unwrap())
            .with_centered(false)
            .with_max_iterations(0)
            .with_seed(9);
        let r = gradient_attack(&m, &d.features, &cfg, &GradientParams::default()).unwrap();
        assert_eq!(r.loss_trace.len(), 1);
        let direct = crate::attack::attack_loss(&r.poisoned, &m, &cfg, &d.features).unwrap();
        assert_eq!(r.final_loss, direct);
        assert_ne!(r.poisoned, d.features);
        assert_eq!(r.poisoned.column(0), d.features.column(0));
    }

    #[test]
    fn linear_centered_robustness_only_moves_at_init() {
        let d = generate_friedman(20, 1, 5).unwrap();
        let m = LinearModel::fit(&d, Task::Regression).unwrap();
        let cfg = AttackConfig::robustness(build_grid(&d.features, 0, 6).unwrap()).with_seed(2);
        let start = gradient_attack(&m, &d.features, &cfg.clone().with_max_iterations(0), &GradientParams::default())
            .unwrap();
        let run = gradient_attack(&m, &d.features, &cfg.with_max_iterations(50), &GradientParams::default()).unwrap();
        assert!(run.loss_trace.iter().all(|l| l.abs() < 1e-20));
        let drift = (&run.poisoned.values() - &start.poisoned.values()).mapv(f64::abs);
        assert!(drift.iter().all(|&v| v < 1e-6), "max drift {}", drift.iter().cloned().fold(0.0, f64::max));
    }
}
