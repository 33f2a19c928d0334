//! NSGA-II over integer window vectors.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::MetricContext;
use crate::rng::{self, SimRng};

/// Acceptance bound on every objective for [`pick_optimum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    /// A fixed bound.
    Absolute(f64),
    /// A multiple of the individual's scale (the network fairness index).
    Relative(f64),
}

impl Threshold {
    pub fn limit(&self, scale: f64) -> f64 {
        match *self {
            Threshold::Absolute(t) => t,
            Threshold::Relative(f) => f * scale,
        }
    }

    fn value(&self) -> f64 {
        match *self {
            Threshold::Absolute(t) | Threshold::Relative(t) => t,
        }
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(0.15)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means one over the genome length.
    pub mutation_rate: Option<f64>,
    pub threshold: Threshold,
    /// Polish every member of the final population by integer local search
    /// before picking the optimum.
    pub refine: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            max_generations: 100,
            crossover_rate: 0.9,
            mutation_rate: None,
            threshold: Threshold::default(),
            refine: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_operators()?;
        if self.max_generations == 0 {
            return Err(Error::invalid("ga.max_generations", "must be at least 1"));
        }
        Ok(())
    }

    fn validate_operators(&self) -> Result<()> {
        let m = self.population_size;
        if m < 4 || !m.is_multiple_of(2) {
            return Err(Error::invalid(
                "ga.population_size",
                format!("must be even and >= 4 (got {m})"),
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::invalid("ga.crossover_rate", "must lie in [0, 1]"));
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid("ga.mutation_rate", "must lie in [0, 1]"));
            }
        }
        let t = self.threshold.value();
        if !(t > 0.0) {
            return Err(Error::invalid("ga.threshold", "must be positive"));
        }
        Ok(())
    }

    pub fn mutation_rate_for(&self, genes: usize) -> f64 {
        self.mutation_rate.unwrap_or(1.0 / genes.max(1) as f64)
    }
}

/// Inclusive gene range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub lo: u32,
    pub hi: u32,
}

impl Bounds {
    pub fn new(lo: u32, hi: u32) -> Result<Self> {
        if lo > hi {
            return Err(Error::domain(format!(
                "lower bound {lo} exceeds upper bound {hi}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, gene: u32) -> bool {
        (self.lo..=self.hi).contains(&gene)
    }
}

/// What the evaluator returns for one genome.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    /// Multiplier applied to a [`Threshold::Relative`] bound.
    pub scale: f64,
}

impl Evaluation {
    pub fn new(objectives: Vec<f64>) -> Self {
        Self {
            objectives,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Vec<u32>,
    pub objectives: Vec<f64>,
    pub scale: f64,
    /// Front index, 0 for the first front.
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn objective_sum(&self) -> f64 {
        self.objectives.iter().sum()
    }

    pub fn is_feasible(&self, threshold: &Threshold) -> bool {
        let limit = threshold.limit(self.scale);
        self.objectives.iter().all(|&f| f <= limit)
    }
}

pub fn initialize<R: Rng + ?Sized>(
    population_size: usize,
    genes: usize,
    bounds: Bounds,
    rng: &mut R,
) -> Vec<Vec<u32>> {
    (0..population_size)
        .map(|_| {
            (0..genes)
                .map(|_| rng.random_range(bounds.lo..=bounds.hi))
                .collect()
        })
        .collect()
}

/// Single-point crossover applied with probability `rate`.
pub fn crossover<R: Rng + ?Sized>(
    a: &[u32],
    b: &[u32],
    rate: f64,
    rng: &mut R,
) -> (Vec<u32>, Vec<u32>) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    if a.len() > 1 && rate > 0.0 && rng.random_bool(rate) {
        let cut = rng.random_range(1..a.len());
        x[cut..].copy_from_slice(&b[cut..]);
        y[cut..].copy_from_slice(&a[cut..]);
    }
    (x, y)
}

/// Redraw each gene uniformly within `bounds` with probability `rate`.
pub fn mutate<R: Rng + ?Sized>(genome: &mut [u32], rate: f64, bounds: Bounds, rng: &mut R) {
    if rate <= 0.0 {
        return;
    }
    for gene in genome.iter_mut() {
        if rng.random_bool(rate) {
            *gene = rng.random_range(bounds.lo..=bounds.hi);
        }
    }
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strictly |= x < y;
    }
    strictly
}

/// Partition `points` into fronts of indices, best first.
pub fn non_dominated_sort(points: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::domain("non-finite objective"));
    }
    let n = points.len();
    let mut beats: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut beaten_by = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&points[i], &points[j]) {
                beats[i].push(j);
                beaten_by[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                beats[j].push(i);
                beaten_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| beaten_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &beats[i] {
                beaten_by[j] -= 1;
                if beaten_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    Ok(fronts)
}

/// Crowding distance of each point of one front.
#[allow(clippy::needless_range_loop)]
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut distance = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..front[0].len() {
        order.sort_by(|&a, &b| front[a][k].total_cmp(&front[b][k]).then(a.cmp(&b)));
        let (lo, hi) = (front[order[0]][k], front[order[n - 1]][k]);
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in order.windows(3) {
            distance[w[1]] += (front[w[2]][k] - front[w[0]][k]) / span;
        }
    }
    distance
}

/// Assign rank and crowding distance to every individual in place.
pub fn rank_and_crowd(population: &mut [Individual]) -> Result<()> {
    let points: Vec<Vec<f64>> = population.iter().map(|i| i.objectives.clone()).collect();
    for (rank, front) in non_dominated_sort(&points)?.into_iter().enumerate() {
        let members: Vec<Vec<f64>> = front.iter().map(|&i| points[i].clone()).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&members)) {
            population[i].rank = rank;
            population[i].crowding = d;
        }
    }
    Ok(())
}

/// Crowded-comparison order: lower rank, then larger crowding distance, then
/// lexicographically smaller genome.
pub fn crowded_order(a: &Individual, b: &Individual) -> Ordering {
    a.rank
        .cmp(&b.rank)
        .then(b.crowding.total_cmp(&a.crowding))
        .then_with(|| a.genome.cmp(&b.genome))
}

/// Keep the best `m` of `merged` by front rank and crowding distance.
pub fn select_survivors(mut merged: Vec<Individual>, m: usize) -> Result<Vec<Individual>> {
    if merged.len() < m {
        return Err(Error::domain(format!(
            "cannot select {m} survivors from {}",
            merged.len()
        )));
    }
    rank_and_crowd(&mut merged)?;
    merged.sort_by(crowded_order);
    merged.truncate(m);
    Ok(merged)
}

fn tournament<'a>(population: &'a [Individual], rng: &mut SimRng) -> &'a Individual {
    let a = &population[rng.random_range(0..population.len())];
    let b = &population[rng.random_range(0..population.len())];
    if crowded_order(b, a) == Ordering::Less {
        b
    } else {
        a
    }
}

/// The selected window vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub genome: Vec<u32>,
    pub objectives: Vec<f64>,
    pub objective_sum: f64,
    /// No individual met the threshold, so the unfiltered minimiser was taken.
    pub relaxed: bool,
}

/// Minimum objective sum among individuals meeting `threshold` on every
/// objective; falls back to the whole population when none does.
pub fn pick_optimum(population: &[Individual], threshold: &Threshold) -> Result<Optimum> {
    if population.is_empty() {
        return Err(Error::domain("empty population"));
    }
    let best = |filter: &dyn Fn(&Individual) -> bool| {
        population.iter().filter(|i| filter(i)).min_by(|a, b| {
            a.objective_sum()
                .total_cmp(&b.objective_sum())
                .then_with(|| a.genome.cmp(&b.genome))
        })
    };
    let (chosen, relaxed) = match best(&|i| i.is_feasible(threshold)) {
        Some(i) => (i, false),
        None => (best(&|_| true).expect("non-empty"), true),
    };
    Ok(Optimum {
        genome: chosen.genome.clone(),
        objectives: chosen.objectives.clone(),
        objective_sum: chosen.objective_sum(),
        relaxed,
    })
}

fn evaluate_one<E>(genome: Vec<u32>, evaluator: &E) -> Result<Individual>
where
    E: Fn(&[u32]) -> Result<Evaluation> + Sync,
{
    let genes = genome.len();
    evaluate_all(vec![genome], evaluator, genes).map(|mut v| v.remove(0))
}

/// Genomes one step away: every single gene moved by ±1 and every pair of
/// genes moved by ±1 each, clipped to `bounds`.
fn neighbours(genome: &[u32], bounds: &Bounds) -> Vec<Vec<u32>> {
    let shift = |g: u32, up: bool| -> Option<u32> {
        let v = if up {
            g.checked_add(1)?
        } else {
            g.checked_sub(1)?
        };
        bounds.contains(v).then_some(v)
    };
    let mut out = Vec::new();
    for i in 0..genome.len() {
        for up in [false, true] {
            if let Some(v) = shift(genome[i], up) {
                let mut g = genome.to_vec();
                g[i] = v;
                out.push(g);
            }
        }
    }
    for i in 0..genome.len() {
        for j in i + 1..genome.len() {
            for (ui, uj) in [(false, false), (false, true), (true, false), (true, true)] {
                if let (Some(a), Some(b)) = (shift(genome[i], ui), shift(genome[j], uj)) {
                    let mut g = genome.to_vec();
                    g[i] = a;
                    g[j] = b;
                    out.push(g);
                }
            }
        }
    }
    out
}

/// Steepest descent on the objective sum over [`neighbours`]. A feasible
/// start only moves to feasible genomes; an infeasible one takes any
/// improving move.
pub fn local_search<E>(
    start: Individual,
    bounds: &Bounds,
    threshold: &Threshold,
    evaluator: &E,
) -> Result<Individual>
where
    E: Fn(&[u32]) -> Result<Evaluation> + Sync,
{
    let keep_feasible = start.is_feasible(threshold);
    let mut current = start;
    loop {
        let mut best: Option<Individual> = None;
        for g in neighbours(&current.genome, bounds) {
            let cand = evaluate_one(g, evaluator)?;
            if keep_feasible && !cand.is_feasible(threshold) {
                continue;
            }
            let bar = best.as_ref().unwrap_or(&current).objective_sum();
            if cand.objective_sum() < bar {
                best = Some(cand);
            }
        }
        match best {
            Some(b) => current = b,
            None => return Ok(current),
        }
    }
}

/// Distinct members of `population` each polished by [`local_search`], in
/// genome order.
pub fn refine<E>(
    population: &[Individual],
    bounds: &Bounds,
    threshold: &Threshold,
    evaluator: &E,
) -> Result<Vec<Individual>>
where
    E: Fn(&[u32]) -> Result<Evaluation> + Sync,
{
    let mut starts: Vec<Individual> = population.to_vec();
    starts.sort_by(|a, b| a.genome.cmp(&b.genome));
    starts.dedup_by(|a, b| a.genome == b.genome);
    exec::map(&starts, |s| {
        local_search(s.clone(), bounds, threshold, evaluator)
    })
    .into_iter()
    .collect()
}

/// First-front objectives and population summaries after one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSnapshot {
    pub generation: usize,
    pub front: Vec<Vec<f64>>,
    pub best_sum: f64,
    pub feasible_count: usize,
}

impl GenerationSnapshot {
    fn of(generation: usize, population: &[Individual], threshold: &Threshold) -> Self {
        let mut front: Vec<Vec<f64>> = population
            .iter()
            .filter(|i| i.rank == 0)
            .map(|i| i.objectives.clone())
            .collect();
        front.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        });
        front.dedup();
        Self {
            generation,
            front,
            best_sum: population
                .iter()
                .map(Individual::objective_sum)
                .fold(f64::INFINITY, f64::min),
            feasible_count: population
                .iter()
                .filter(|i| i.is_feasible(threshold))
                .count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub initial: Vec<Individual>,
    pub population: Vec<Individual>,
    /// One entry per generation; entry 0 is the initial population.
    pub generations: Vec<GenerationSnapshot>,
}

impl RunResult {
    /// Non-dominated objective vectors of the final population.
    pub fn final_front(&self) -> Vec<Vec<f64>> {
        self.generations
            .last()
            .map(|g| g.front.clone())
            .unwrap_or_else(|| {
                GenerationSnapshot::of(0, &self.population, &Threshold::default()).front
            })
    }
}

fn evaluate_all<E>(genomes: Vec<Vec<u32>>, evaluator: &E, genes: usize) -> Result<Vec<Individual>>
where
    E: Fn(&[u32]) -> Result<Evaluation> + Sync,
{
    exec::map(&genomes, |g| evaluator(g))
        .into_iter()
        .zip(genomes)
        .map(|(eval, genome)| {
            let eval = eval?;
            if eval.objectives.len() != genes {
                return Err(Error::Internal(format!(
                    "evaluator returned {} objectives for {genes} genes",
                    eval.objectives.len()
                )));
            }
            Ok(Individual {
                genome,
                objectives: eval.objectives,
                scale: eval.scale,
                rank: 0,
                crowding: 0.0,
            })
        })
        .collect()
}

/// Run NSGA-II for `config.max_generations` generations. Offspring of one
/// generation are evaluated concurrently.
pub fn run<E>(
    config: &GaConfig,
    genes: usize,
    bounds: Bounds,
    seed: u64,
    evaluator: E,
) -> Result<RunResult>
where
    E: Fn(&[u32]) -> Result<Evaluation> + Sync,
{
    config.validate_operators()?;
    if genes == 0 {
        return Err(Error::domain("genome must have at least one gene"));
    }
    let m = config.population_size;
    let mutation = config.mutation_rate_for(genes);
    let mut rng = rng::stream(seed, 0);

    let mut population = evaluate_all(initialize(m, genes, bounds, &mut rng), &evaluator, genes)?;
    rank_and_crowd(&mut population)?;
    let initial = population.clone();
    let mut generations = Vec::with_capacity(config.max_generations + 1);
    generations.push(GenerationSnapshot::of(0, &population, &config.threshold));

    for generation in 1..=config.max_generations {
        let mut children = Vec::with_capacity(m);
        while children.len() < m {
            let a = tournament(&population, &mut rng);
            let b = tournament(&population, &mut rng);
            let (mut x, mut y) = crossover(&a.genome, &b.genome, config.crossover_rate, &mut rng);
            mutate(&mut x, mutation, bounds, &mut rng);
            mutate(&mut y, mutation, bounds, &mut rng);
            children.push(x);
            children.push(y);
        }
        let mut merged = population;
        merged.extend(evaluate_all(children, &evaluator, genes)?);
        population = select_survivors(merged, m)?;
        generations.push(GenerationSnapshot::of(
            generation,
            &population,
            &config.threshold,
        ));
    }

    Ok(RunResult {
        initial,
        population,
        generations,
    })
}

/// One row of the per-generation history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRow {
    pub generation: usize,
    pub hv: f64,
    pub igd: f64,
    pub gd: f64,
    pub spacing: f64,
    pub best_sum: f64,
    pub feasible_count: usize,
}

/// Score every generation's first front against `context`.
pub fn history(result: &RunResult, context: &MetricContext) -> Result<Vec<HistoryRow>> {
    exec::map(&result.generations, |g| {
        let m = context.evaluate(&g.front)?;
        Ok(HistoryRow {
            generation: g.generation,
            hv: m.hv,
            igd: m.igd,
            gd: m.gd,
            spacing: m.spacing,
            best_sum: g.best_sum,
            feasible_count: g.feasible_count,
        })
    })
    .into_iter()
    .collect()
}
