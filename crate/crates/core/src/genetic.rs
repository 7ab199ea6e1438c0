//! Model-agnostic data poisoning with a genetic algorithm.
//!
//! An individual is a whole candidate dataset. Each iteration runs crossover
//! (column exchange between parent pairs), Gaussian mutation of the free
//! columns, loss evaluation, and rank selection with elitism. The model is
//! only ever asked for predictions.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackObjective, AttackResult};
use crate::data::{ColumnStats, Dataset};
use crate::error::{Error, Result};
use crate::models::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneticParams {
    pub pop_count: usize,
    /// Fraction of the population drawn as crossover parents.
    pub crossover_ratio: f64,
    /// Mutation noise sd as a fraction of each column's sd in X′.
    pub std_ratio: f64,
    /// Noise multiplier for the initial mutation.
    pub init_std_multiplier: f64,
    /// Keep mutated values inside the original column ranges.
    pub mutation_with_constraints: bool,
    pub elitism_count: usize,
}

impl Default for GeneticParams {
    fn default() -> Self {
        GeneticParams {
            pop_count: 50,
            crossover_ratio: 0.5,
            std_ratio: 0.1,
            init_std_multiplier: 3.0,
            mutation_with_constraints: true,
            elitism_count: 2,
        }
    }
}

impl GeneticParams {
    pub fn validate(&self) -> Result<()> {
        if self.elitism_count == 0 || self.elitism_count >= self.pop_count {
            return Err(Error::invalid("need 1 <= elitism_count < pop_count"));
        }
        if !(self.crossover_ratio > 0.0 && self.crossover_ratio <= 1.0) {
            return Err(Error::invalid("crossover_ratio must lie in (0, 1]"));
        }
        if !(self.std_ratio >= 0.0 && self.std_ratio.is_finite()) {
            return Err(Error::invalid("std_ratio must be finite and non-negative"));
        }
        if !(self.init_std_multiplier >= 1.0 && self.init_std_multiplier.is_finite()) {
            return Err(Error::invalid("init_std_multiplier must be at least 1"));
        }
        Ok(())
    }
}

/// Candidate datasets with their losses (`NaN` until evaluated).
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub individuals: Vec<Array2<f64>>,
    pub losses: Vec<f64>,
}

impl Population {
    /// `count` copies of `x`.
    pub fn filled(x: &Array2<f64>, count: usize) -> Self {
        Population {
            individuals: vec![x.clone(); count],
            losses: vec![f64::NAN; count],
        }
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    fn push(&mut self, individual: Array2<f64>) {
        self.individuals.push(individual);
        self.losses.push(f64::NAN);
    }

    /// Index of the lowest evaluated loss (first on ties).
    pub fn best(&self) -> Option<usize> {
        self.losses
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_nan())
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }
}

/// Appends one child per parent pair. `floor(ratio · size)` parents are drawn
/// without replacement and paired in draw order; an odd one out is dropped.
/// Each free column of a child comes from either parent with probability ½.
pub fn crossover<R: Rng>(population: &mut Population, crossover_ratio: f64, free: &[bool], rng: &mut R) {
    let size = population.len();
    let n_parents = ((crossover_ratio * size as f64).floor() as usize).min(size);
    if n_parents < 2 {
        return;
    }
    let parents = index::sample(rng, size, n_parents).into_vec();
    for pair in parents.chunks_exact(2) {
        let mut child = population.individuals[pair[0]].clone();
        let other = &population.individuals[pair[1]];
        for (j, &is_free) in free.iter().enumerate() {
            if is_free && rng.random_bool(0.5) {
                child.column_mut(j).assign(&other.column(j));
            }
        }
        population.push(child);
    }
}

/// Adds `N(0, (sd_j · std_ratio)²)` noise to every free cell of every
/// individual from index `skip` on. With constraints, a value pushed outside
/// `[min_j, max_j]` of X′ is redrawn uniformly between its pre-mutation value
/// and the violated bound.
pub fn mutate<R: Rng>(
    population: &mut Population,
    stats: &ColumnStats,
    free: &[bool],
    std_ratio: f64,
    mutation_with_constraints: bool,
    skip: usize,
    rng: &mut R,
) {
    let noise_sd: Vec<f64> = stats.sd.iter().map(|sd| sd * std_ratio).collect();
    if !free.iter().zip(&noise_sd).any(|(&f, &s)| f && s > 0.0) {
        return;
    }
    for (individual, loss) in population
        .individuals
        .iter_mut()
        .zip(population.losses.iter_mut())
        .skip(skip)
    {
        for mut row in individual.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                if !free[j] || noise_sd[j] <= 0.0 {
                    continue;
                }
                let old = *v;
                let mut new = old + noise_sd[j] * rng.sample::<f64, _>(StandardNormal);
                if mutation_with_constraints {
                    let (lo, hi) = (stats.min[j], stats.max[j]);
                    let anchor = old.clamp(lo, hi);
                    if new < lo {
                        new = lo + (anchor - lo) * rng.random::<f64>();
                    } else if new > hi {
                        new = anchor + (hi - anchor) * rng.random::<f64>();
                    }
                }
                *v = new;
            }
        }
        *loss = f64::NAN;
    }
}

/// Computes the loss of every individual not yet evaluated. Individuals are
/// independent, so they are scored in parallel.
pub fn evaluate<P: Predictor + ?Sized>(population: &mut Population, objective: &AttackObjective<'_, P>) -> Vec<f64> {
    let fresh: Vec<(usize, f64)> = population
        .losses
        .par_iter()
        .enumerate()
        .filter(|(_, l)| l.is_nan())
        .map(|(i, _)| (i, objective.loss(population.individuals[i].view())))
        .collect();
    for (i, l) in fresh {
        population.losses[i] = l;
    }
    population.losses.clone()
}

/// Linear rank selection with elitism. The population is ordered by loss
/// (rank 1 = lowest); the `elitism_count` best always survive and the other
/// `pop_count − elitism_count` slots are sampled without replacement from the
/// rest, rank r drawn with weight `size − r + 1`. Survivors stay in rank order.
pub fn select<R: Rng>(population: Population, pop_count: usize, elitism_count: usize, rng: &mut R) -> Result<Population> {
    let size = population.len();
    if size < pop_count || elitism_count > pop_count {
        return Err(Error::invalid(format!(
            "cannot select {pop_count} (with {elitism_count} elites) from {size}"
        )));
    }
    if population.losses.iter().any(|l| l.is_nan()) {
        return Err(Error::invalid("selection needs an evaluated population"));
    }
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| population.losses[a].total_cmp(&population.losses[b]).then(a.cmp(&b)));

    // (rank position, weight) of the candidates still in the pool
    let mut pool: Vec<(usize, f64)> = (elitism_count..size).map(|pos| (pos, (size - pos) as f64)).collect();
    let mut chosen: Vec<usize> = (0..elitism_count).collect();
    for _ in elitism_count..pop_count {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (k, (_, w)) in pool.iter().enumerate() {
            if u < *w {
                pick = k;
                break;
            }
            u -= w;
        }
        chosen.push(pool.remove(pick).0);
    }
    chosen.sort_unstable();

    let mut slots: Vec<Option<Array2<f64>>> = population.individuals.into_iter().map(Some).collect();
    let mut out = Population {
        individuals: Vec::with_capacity(pop_count),
        losses: Vec::with_capacity(pop_count),
    };
    for pos in chosen {
        let i = order[pos];
        out.individuals.push(slots[i].take().expect("each index chosen once"));
        out.losses.push(population.losses[i]);
    }
    Ok(out)
}

/// Runs the genetic attack against any predictor.
///
/// The population starts as `pop_count` copies of X′ mutated once with
/// `std_ratio · init_std_multiplier`. Each iteration runs crossover, mutation,
/// evaluation and (except on the last iteration) selection. Elites kept by
/// selection are not mutated in the following iteration, so the best loss
/// never increases. Returns the best individual of the final population.
pub fn genetic_attack<P: Predictor + ?Sized>(
    model: &P,
    x_prime: &Dataset,
    config: &AttackConfig,
    params: &GeneticParams,
) -> Result<AttackResult> {
    params.validate()?;
    let objective = AttackObjective::new(model, config, x_prime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stats = x_prime.stats();
    let free = config.free_mask(x_prime.n_cols());
    let base = x_prime.values().to_owned();

    let mut population = Population::filled(&base, params.pop_count);
    mutate(
        &mut population,
        &stats,
        &free,
        params.std_ratio * params.init_std_multiplier,
        params.mutation_with_constraints,
        0,
        &mut rng,
    );

    let mut trace = Vec::with_capacity(config.max_iterations.max(1));
    let mut protected = 0;
    for iteration in 0..config.max_iterations {
        crossover(&mut population, params.crossover_ratio, &free, &mut rng);
        mutate(
            &mut population,
            &stats,
            &free,
            params.std_ratio,
            params.mutation_with_constraints,
            protected,
            &mut rng,
        );
        evaluate(&mut population, &objective);
        let best = population.best().expect("evaluated population");
        trace.push(population.losses[best]);
        if iteration + 1 < config.max_iterations {
            population = select(population, params.pop_count, params.elitism_count, &mut rng)?;
            protected = params.elitism_count;
        }
    }
    if config.max_iterations == 0 {
        evaluate(&mut population, &objective);
        trace.push(population.losses[population.best().expect("evaluated population")]);
    }

    let best = population.best().expect("evaluated population");
    let final_loss = population.losses[best];
    let poisoned = x_prime.with_values(population.individuals.swap_remove(best))?;
    AttackResult::assemble(model, x_prime, config, poisoned, trace, final_loss)
}
