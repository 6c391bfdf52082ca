//! Cooperative synapse neuroevolution over flat genomes.
//!
//! Each generation every individual is scored on one shared block of
//! episode seeds. The top `elite_count` survive unchanged; the remaining
//! slots are filled with mutated uniform-crossover children of parents drawn
//! from the top quarter. Finally each synapse column is partially permuted
//! across the population, with lower-ranked rows more likely to take part.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{derive_seed, rng_from, streams, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeConfig {
    pub population: usize,
    pub generations: usize,
    pub p_mut: f64,
    /// Standard deviation of the additive mutation noise.
    pub sigma_mut: f64,
    pub episodes_per_eval: usize,
    /// Budget on the mean episodic power, in watt-frames.
    pub power_budget: f64,
    pub elite_count: usize,
}

impl NeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("ne.{field}"), msg));
        if self.population < 4 || self.population / 4 < 2 {
            return bad("population", "must be >= 8 so the parent pool has at least two members");
        }
        if !(0.0..=1.0).contains(&self.p_mut) {
            return bad("p_mut", "must lie in [0, 1]");
        }
        if !(self.sigma_mut >= 0.0 && self.sigma_mut.is_finite()) {
            return bad("sigma_mut", "must be finite and >= 0");
        }
        if self.episodes_per_eval == 0 {
            return bad("episodes_per_eval", "must be >= 1");
        }
        if !(self.power_budget >= 0.0 && self.power_budget.is_finite()) {
            return bad("power_budget", "must be finite and >= 0");
        }
        if self.elite_count >= self.population {
            return bad("elite_count", "must be smaller than the population");
        }
        Ok(())
    }

    pub fn parent_pool_size(&self) -> usize {
        self.population / 4
    }
}

/// Score of one individual on one evaluation block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub fitness: f64,
    /// Mean of `Σ_t P(t)` over the block.
    pub mean_power: f64,
    /// Mean Euclidean localization error in meters.
    pub mean_distance: f64,
}

impl FitnessReport {
    pub fn new(mean_power: f64, mean_distance: f64, budget: f64) -> Self {
        Self { fitness: budget_fitness(mean_power, mean_distance, budget), mean_power, mean_distance }
    }

    /// Report for an individual whose networks produced non-finite values.
    pub fn culled() -> Self {
        Self { fitness: f64::NEG_INFINITY, mean_power: f64::NAN, mean_distance: f64::NAN }
    }

    pub fn feasible(&self, budget: f64) -> bool {
        self.fitness.is_finite() && self.mean_power <= budget
    }
}

/// `−P̄` when the budget is exceeded, `−D̄` otherwise; `−∞` on non-finite input.
pub fn budget_fitness(mean_power: f64, mean_distance: f64, budget: f64) -> f64 {
    if !mean_power.is_finite() || !mean_distance.is_finite() {
        f64::NEG_INFINITY
    } else if mean_power > budget {
        -mean_power
    } else {
        -mean_distance
    }
}

/// Something CoSyNE can optimize.
pub trait NeProblem: Sync {
    fn dimension(&self) -> usize;
    fn random_individual(&self, rng: &mut SimRng) -> Vec<f64>;
    /// Scores `genome` on the episode block `block_seed`. Must be a pure
    /// function of its arguments.
    fn evaluate(&self, genome: &[f64], block_seed: u64) -> FitnessReport;
}

/// Indices sorted by descending fitness, ties by ascending index. NaN ranks last.
pub fn rank_order(fitness: &[f64]) -> Vec<usize> {
    let key = |i: usize| if fitness[i].is_nan() { f64::NEG_INFINITY } else { fitness[i] };
    let mut idx: Vec<usize> = (0..fitness.len()).collect();
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    idx
}

/// The best `⌊L/4⌋` individuals, best first.
pub fn select_parents(fitness: &[f64]) -> Vec<usize> {
    let mut order = rank_order(fitness);
    order.truncate(fitness.len() / 4);
    order
}

/// Uniform crossover.
pub fn crossover<R: Rng + ?Sized>(a: &[f64], b: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("crossover of genomes with lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| if rng.random::<bool>() { x } else { y }).collect())
}

/// Adds `N(0, σ²)` to each coordinate with probability `p_mut`.
pub fn mutate<R: Rng + ?Sized>(genome: &mut [f64], p_mut: f64, sigma: f64, rng: &mut R) {
    if p_mut <= 0.0 {
        return;
    }
    let noise = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for g in genome.iter_mut() {
        if rng.random::<f64>() < p_mut {
            *g += noise.sample(rng);
        }
    }
}

/// Probability that the row at `rank` (0 = best) is marked for permutation.
pub fn shuffle_probability(rank: usize, population: usize) -> f64 {
    if population < 2 {
        return 0.0;
    }
    let standing = 1.0 - rank as f64 / (population - 1) as f64;
    1.0 - standing.sqrt()
}

/// Permutes each synapse column among its marked rows. Row `i` is taken to
/// have rank `i`; rows flagged `immune` are never marked.
pub fn permute_synapses<R: Rng + ?Sized>(population: &mut [Vec<f64>], immune: &[bool], rng: &mut R) {
    let n = population.len();
    if n < 2 {
        return;
    }
    let dim = population[0].len();
    let probs: Vec<f64> = (0..n).map(|r| if immune.get(r).copied().unwrap_or(false) { 0.0 } else { shuffle_probability(r, n) }).collect();
    let mut rows = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    #[allow(clippy::needless_range_loop)]
    for k in 0..dim {
        rows.clear();
        rows.extend((0..n).filter(|&r| probs[r] > 0.0 && rng.random::<f64>() < probs[r]));
        if rows.len() < 2 {
            continue;
        }
        values.clear();
        values.extend(rows.iter().map(|&r| population[r][k]));
        values.shuffle(rng);
        for (&r, &v) in rows.iter().zip(&values) {
            population[r][k] = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    pub feasible_fraction: f64,
    pub best_so_far: f64,
}

impl GenerationStats {
    pub const CSV_HEADER: &'static str = "generation,best,mean,worst,feasible_fraction,best_so_far";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.generation, self.best, self.mean, self.worst, self.feasible_fraction, self.best_so_far)
    }
}

/// State handed to the per-generation callback.
pub struct GenerationView<'a> {
    pub stats: &'a GenerationStats,
    pub best_genome: &'a [f64],
    pub best_report: &'a FitnessReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub best: Vec<f64>,
    pub best_report: FitnessReport,
    pub best_generation: usize,
    pub stats: Vec<GenerationStats>,
}

/// Seed of the evaluation block shared by all individuals of a generation.
pub fn generation_block_seed(seed: u64, generation: usize) -> u64 {
    derive_seed(seed, streams::NE_GENERATION, generation as u64)
}

/// Runs CoSyNE for `cfg.generations` generations after scoring the initial
/// population, and returns the best individual seen.
pub fn evolve<P: NeProblem + ?Sized>(
    problem: &P,
    cfg: &NeConfig,
    seed: u64,
    mut on_generation: impl FnMut(&GenerationView<'_>) -> Result<()>,
) -> Result<Evolution> {
    cfg.validate()?;
    let dim = problem.dimension();
    let mut population: Vec<Vec<f64>> =
        (0..cfg.population).map(|i| problem.random_individual(&mut rng_from(derive_seed(seed, streams::NE_INIT, i as u64)))).collect();
    if population.iter().any(|g| g.len() != dim) {
        return Err(Error::Invalid("random_individual returned a genome of the wrong length".into()));
    }
    let mut best: Option<(Vec<f64>, FitnessReport, usize)> = None;
    let mut stats = Vec::with_capacity(cfg.generations + 1);
    for generation in 0..=cfg.generations {
        let block = generation_block_seed(seed, generation);
        let reports: Vec<FitnessReport> = population.par_iter().map(|g| problem.evaluate(g, block)).collect();
        let fitness: Vec<f64> = reports.iter().map(|r| if r.fitness.is_nan() { f64::NEG_INFINITY } else { r.fitness }).collect();
        let order = rank_order(&fitness);
        let top = order[0];
        if best.as_ref().is_none_or(|(_, r, _)| fitness[top] > r.fitness) {
            best = Some((population[top].clone(), reports[top], generation));
        }
        let (best_genome, best_report, _) = best.as_ref().expect("set above");
        let s = GenerationStats {
            generation,
            best: fitness[top],
            mean: fitness.iter().sum::<f64>() / fitness.len() as f64,
            worst: fitness[*order.last().expect("population is non-empty")],
            feasible_fraction: reports.iter().filter(|r| r.feasible(cfg.power_budget)).count() as f64 / reports.len() as f64,
            best_so_far: best_report.fitness,
        };
        on_generation(&GenerationView { stats: &s, best_genome, best_report })?;
        stats.push(s);
        if generation < cfg.generations {
            let mut rng = rng_from(derive_seed(seed, streams::NE_BREED, generation as u64));
            population = next_generation(&population, &order, cfg, &mut rng)?;
        }
    }
    let (best, best_report, best_generation) = best.expect("at least one generation is evaluated");
    Ok(Evolution { best, best_report, best_generation, stats })
}

fn next_generation(population: &[Vec<f64>], order: &[usize], cfg: &NeConfig, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
    let pool = &order[..cfg.parent_pool_size()];
    let mut pairs: Vec<(usize, usize)> = (cfg.elite_count..cfg.population)
        .map(|_| {
            let a = rng.random_range(0..pool.len());
            let mut b = rng.random_range(0..pool.len() - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        })
        .collect();
    // Pool positions double as ranks, so children of fitter pairs sit higher.
    pairs.sort_by_key(|&(a, b)| a + b);
    let mut next: Vec<Vec<f64>> = order[..cfg.elite_count].iter().map(|&i| population[i].clone()).collect();
    for (a, b) in pairs {
        let mut child = crossover(&population[pool[a]], &population[pool[b]], rng)?;
        mutate(&mut child, cfg.p_mut, cfg.sigma_mut, rng);
        next.push(child);
    }
    let immune: Vec<bool> = (0..cfg.population).map(|r| r < cfg.elite_count).collect();
    permute_synapses(&mut next, &immune, rng);
    Ok(next)
}
