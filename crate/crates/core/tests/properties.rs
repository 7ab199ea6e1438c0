use ndarray::{Array1, Array2, ArrayView2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdpoison::attack::{attack_loss, AttackObjective};
use pdpoison::data::{friedman_target, generate_friedman, Dataset};
use pdpoison::genetic::{crossover, evaluate, mutate, select, Population};
use pdpoison::gradient::loss_and_gradient;
use pdpoison::models::{GbmSpec, KnnSpec, LinearModel, MlpSpec, TreeSpec};
use pdpoison::pd::Grid;
use pdpoison::{
    build_grid, fit, gradient_attack, partial_dependence, AttackConfig, GradientParams, ModelSpec, Predictor,
    Strategy, Task,
};

fn families() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Linear,
        ModelSpec::Tree(TreeSpec { max_depth: 4, ..Default::default() }),
        ModelSpec::Gbm(GbmSpec { n_trees: 10, ..Default::default() }),
        ModelSpec::Knn(KnnSpec { k: 3 }),
        ModelSpec::Mlp(MlpSpec { layers: 1, neurons: 6, epochs: 20, ..Default::default() }),
    ]
}

fn permuted(x: &Dataset, seed: u64) -> Dataset {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    x.with_values(x.values().select(Axis(0), &order)).unwrap()
}

/// `base(x) + extra(x)²`, which dominates `base` everywhere.
struct Dominating<'a> {
    base: &'a dyn Predictor,
    extra: LinearModel,
}

impl Predictor for Dominating<'_> {
    fn n_features(&self) -> usize {
        self.base.n_features()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.base.predict_rows(x) + self.extra.predict_rows(x).mapv(|v| v * v)
    }
}

/// `base(x) + shift`.
struct Shifted<'a> {
    base: &'a dyn Predictor,
    shift: f64,
}

impl Predictor for Shifted<'_> {
    fn n_features(&self) -> usize {
        self.base.n_features()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.base.predict_rows(x) + self.shift
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn friedman_target_matches_features(seed in any::<u64>(), rows in 1usize..50, noise in 0usize..4) {
        let d = generate_friedman(rows, noise, seed).unwrap();
        for (row, &y) in d.features.values().rows().into_iter().zip(d.target.iter()) {
            prop_assert!((friedman_target(row) - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn pd_is_bit_identical_under_row_permutation(seed in any::<u64>(), family in 0usize..5, column in 0usize..5) {
        let d = generate_friedman(40, 0, seed).unwrap();
        let m = fit(&d, &families()[family], Task::Regression, seed).unwrap();
        let g = build_grid(&d.features, column, 7).unwrap();
        let a = partial_dependence(&m, &d.features, &g).unwrap();
        let b = partial_dependence(&m, &permuted(&d.features, seed ^ 1), &g).unwrap();
        prop_assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn linear_pd_closed_form(
        seed in any::<u64>(),
        beta in proptest::collection::vec(-5.0f64..5.0, 6),
        b in -3.0f64..3.0,
        column in 0usize..6,
    ) {
        let x = generate_friedman(25, 1, seed).unwrap().features;
        let m = LinearModel::new(beta.clone(), b);
        let g = build_grid(&x, column, 9).unwrap();
        let p = partial_dependence(&m, &x, &g).unwrap();
        let offset: f64 = x.values().rows().into_iter()
            .map(|r| (0..6).filter(|&j| j != column).map(|j| beta[j] * r[j]).sum::<f64>())
            .sum::<f64>() / 25.0;
        let z_mean = g.points().iter().sum::<f64>() / g.len() as f64;
        for (k, &z) in g.points().iter().enumerate() {
            let tol = 1e-12 * (1.0 + beta.iter().map(|v| v.abs()).sum::<f64>());
            prop_assert!((p.values[k] - (beta[column] * z + offset + b)).abs() < tol);
            prop_assert!((p.centered_values[k] - beta[column] * (z - z_mean)).abs() < tol);
        }
    }

    #[test]
    fn pd_respects_pointwise_dominance(seed in any::<u64>(), family in 0usize..5, w in proptest::collection::vec(-2.0f64..2.0, 5)) {
        let d = generate_friedman(30, 0, seed).unwrap();
        let base = fit(&d, &families()[family], Task::Regression, seed).unwrap();
        let upper = Dominating { base: &base, extra: LinearModel::new(w, 0.1) };
        let g = build_grid(&d.features, 1, 6).unwrap();
        let lo = partial_dependence(&base, &d.features, &g).unwrap();
        let hi = partial_dependence(&upper, &d.features, &g).unwrap();
        for (a, b) in lo.values.iter().zip(&hi.values) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn duplicating_rows_keeps_profile(seed in any::<u64>(), family in 0usize..5) {
        let d = generate_friedman(20, 1, seed).unwrap();
        let m = fit(&d, &families()[family], Task::Regression, seed).unwrap();
        let doubled = ndarray::concatenate(Axis(0), &[d.features.values(), d.features.values()]).unwrap();
        let dd = Dataset::new(doubled, d.features.column_names().to_vec(), d.features.column_kinds().to_vec()).unwrap();
        let g = build_grid(&d.features, 0, 5).unwrap();
        let a = partial_dependence(&m, &d.features, &g).unwrap();
        let b = partial_dependence(&m, &dd, &g).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn loss_signs(seed in any::<u64>(), family in 0usize..5, centered in any::<bool>(), t in proptest::collection::vec(-10.0f64..30.0, 6)) {
        let d = generate_friedman(30, 0, seed).unwrap();
        let other = generate_friedman(30, 0, seed.wrapping_add(1)).unwrap().features;
        let m = fit(&d, &families()[family], Task::Regression, seed).unwrap();
        let g = build_grid(&d.features, 0, 6).unwrap();
        let robust = AttackConfig::robustness(g.clone()).with_centered(centered);
        prop_assert!(attack_loss(&other, &m, &robust, &d.features).unwrap() <= 0.0);
        let targeted = AttackConfig::targeted(g, t).with_centered(centered);
        prop_assert!(attack_loss(&other, &m, &targeted, &d.features).unwrap() >= 0.0);
    }

    #[test]
    fn constant_output_shift(seed in any::<u64>(), family in 0usize..5, shift in -50.0f64..50.0) {
        prop_assume!(shift.abs() > 1e-3);
        let d = generate_friedman(30, 0, seed).unwrap();
        let other = generate_friedman(30, 0, seed.wrapping_add(1)).unwrap().features;
        let m = fit(&d, &families()[family], Task::Regression, seed).unwrap();
        let s = Shifted { base: &m, shift };
        let g = build_grid(&d.features, 0, 6).unwrap();
        let t: Vec<f64> = (0..6).map(|k| k as f64).collect();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        for strategy in [Strategy::Robustness, Strategy::Targeted] {
            let cfg = match strategy {
                Strategy::Robustness => AttackConfig::robustness(g.clone()),
                Strategy::Targeted => AttackConfig::targeted(g.clone(), t.clone()),
            };
            let centered = cfg.clone().with_centered(true);
            prop_assert!(close(
                attack_loss(&other, &m, &centered, &d.features).unwrap(),
                attack_loss(&other, &s, &centered, &d.features).unwrap()
            ));
        }
        // a raw profile moves with the shift, so its distance to a fixed target changes
        let raw = AttackConfig::targeted(g, t).with_centered(false);
        prop_assert!(!close(
            attack_loss(&other, &m, &raw, &d.features).unwrap(),
            attack_loss(&other, &s, &raw, &d.features).unwrap()
        ));
    }

    #[test]
    fn loss_invariant_to_row_permutation(seed in any::<u64>(), family in 0usize..5, centered in any::<bool>()) {
        let d = generate_friedman(30, 0, seed).unwrap();
        let other = generate_friedman(30, 0, seed.wrapping_add(7)).unwrap().features;
        let m = fit(&d, &families()[family], Task::Regression, seed).unwrap();
        let cfg = AttackConfig::robustness(build_grid(&d.features, 2, 6).unwrap()).with_centered(centered);
        let a = attack_loss(&other, &m, &cfg, &d.features).unwrap();
        let b = attack_loss(&permuted(&other, seed), &m, &cfg, &permuted(&d.features, seed ^ 3)).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn gradient_is_zero_on_constant_columns(seed in any::<u64>(), extra in 1usize..5, centered in any::<bool>()) {
        let d = generate_friedman(12, 0, seed).unwrap();
        let m = fit(&d, &ModelSpec::Mlp(MlpSpec { layers: 2, neurons: 6, epochs: 10, ..Default::default() }), Task::Regression, seed).unwrap();
        let cfg = AttackConfig::robustness(build_grid(&d.features, 0, 5).unwrap())
            .with_centered(centered)
            .with_constant_columns([extra]);
        let x = d.features.values().mapv(|v| v * 1.1 + 0.01);
        let objective = AttackObjective::new(m.differentiable().unwrap(), &cfg, &d.features).unwrap();
        let (_, grad) = loss_and_gradient(&objective, x.view());
        prop_assert!(grad.column(0).iter().chain(grad.column(extra).iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_attack_is_seeded_and_keeps_constant_columns(seed in any::<u64>(), centered in any::<bool>()) {
        let d = generate_friedman(20, 1, seed).unwrap();
        let m = fit(&d, &ModelSpec::Mlp(MlpSpec { layers: 1, neurons: 6, epochs: 10, ..Default::default() }), Task::Regression, 0).unwrap();
        let cfg = AttackConfig::robustness(build_grid(&d.features, 0, 5).unwrap())
            .with_centered(centered)
            .with_constant_columns([3])
            .with_seed(seed)
            .with_max_iterations(5);
        let model = m.differentiable().unwrap();
        let a = gradient_attack(model, &d.features, &cfg, &GradientParams::default()).unwrap();
        let b = gradient_attack(model, &d.features, &cfg, &GradientParams::default()).unwrap();
        prop_assert!(a == b);
        for j in [0, 3] {
            prop_assert!(a.poisoned.column(j).iter().zip(d.features.column(j)).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn genetic_population_keeps_constant_columns(seed in any::<u64>(), pop_count in 2usize..10, constraints in any::<bool>()) {
        let d = generate_friedman(15, 1, seed).unwrap();
        let m = fit(&d, &ModelSpec::Tree(TreeSpec::default()), Task::Regression, 0).unwrap();
        let cfg = AttackConfig::robustness(build_grid(&d.features, 1, 4).unwrap()).with_constant_columns([4]);
        let objective = AttackObjective::new(&m, &cfg, &d.features).unwrap();
        let stats = d.features.stats();
        let free = cfg.free_mask(d.features.n_cols());
        let original = d.features.values().to_owned();
        let mut pop = Population::filled(&original, pop_count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mutate(&mut pop, &stats, &free, 0.3, constraints, 0, &mut rng);
        for _ in 0..4 {
            crossover(&mut pop, 0.5, &free, &mut rng);
            mutate(&mut pop, &stats, &free, 0.1, constraints, 1, &mut rng);
            evaluate(&mut pop, &objective);
            for x in &pop.individuals {
                for j in [1, 4] {
                    prop_assert!(x.column(j).iter().zip(original.column(j)).all(|(p, q)| p.to_bits() == q.to_bits()));
                }
            }
            pop = select(pop, pop_count, 1, &mut rng).unwrap();
            prop_assert_eq!(pop.len(), pop_count);
        }
    }
}

/// On a linear model the non-centered targeted loss is a convex quadratic in X.
#[test]
fn targeted_trace_mostly_decreases_on_convex_case() {
    let d = generate_friedman(30, 0, 4).unwrap();
    let m = LinearModel::new(vec![2.0, -1.0, 0.5, 1.5, 1.0], 0.3);
    let g: Grid = build_grid(&d.features, 0, 8).unwrap();
    let before = partial_dependence(&m, &d.features, &g).unwrap();
    let target: Vec<f64> = before.values.iter().map(|v| v - 5.0).collect();
    let cfg = AttackConfig::targeted(g, target).with_max_iterations(100).with_seed(1);
    let r = gradient_attack(&m, &d.features, &cfg, &GradientParams::default()).unwrap();
    let steps = r.loss_trace.len() - 1;
    let down = r.loss_trace.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.95 * steps as f64, "{down}/{steps} non-increasing steps");
    assert!(r.final_loss < r.loss_trace[0]);
}

#[test]
fn shifted_model_is_really_shifted() {
    let x = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
    let m = LinearModel::new(vec![1.0], 0.0);
    let s = Shifted { base: &m, shift: 2.0 };
    assert_eq!(s.predict_rows(x.view()).to_vec(), vec![2.0, 3.0]);
}
