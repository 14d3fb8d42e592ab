use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Solver;
use crate::mdp::Solution;
use crate::problem::{distance_matrix, DistanceMatrix, Instance};
use crate::seeds;

use super::{greedy_construction, route_time, SearchBudget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    /// `max_iterations` counts generations.
    pub budget: SearchBudget,
    pub population: usize,
    pub mutation_rate: f64,
    pub tournament: usize,
    pub elite: usize,
}

impl GaConfig {
    pub fn new(budget: SearchBudget) -> Self {
        GaConfig {
            budget,
            population: 30,
            mutation_rate: 0.2,
            tournament: 3,
            elite: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub solution: Solution,
    /// Best objective in the population after each generation (index 0 is the
    /// initial population).
    pub best_per_generation: Vec<f64>,
}

/// Serves `tour` in order with one vehicle, reloading whenever the next
/// customer does not fit.
fn block_route(instance: &Instance, vehicle: usize, tour: &[usize]) -> Option<Vec<usize>> {
    let cap = instance.vehicles[vehicle].capacity;
    let mut route = Vec::with_capacity(tour.len() * 2);
    let mut load = 0;
    for &c in tour {
        let d = instance.demand(c);
        if d > cap {
            return None;
        }
        if load + d > cap {
            route.push(0);
            load = 0;
        }
        route.push(c);
        load += d;
    }
    Some(route)
}

/// Splits a giant tour into one contiguous block per vehicle (in fleet order)
/// minimizing the longest route. Returns the routes and their objective.
pub fn split_tour(instance: &Instance, dist: &DistanceMatrix, tour: &[usize]) -> Option<(Vec<Vec<usize>>, f64)> {
    let (m, n) = (instance.n_vehicles(), tour.len());
    let cost = |v: usize, a: usize, b: usize| -> f64 {
        block_route(instance, v, &tour[a..b])
            .and_then(|r| route_time(instance, dist, v, &r))
            .unwrap_or(f64::INFINITY)
    };
    // best[v][b]: min over splits of tour[..b] among vehicles 0..=v.
    let mut best = vec![vec![f64::INFINITY; n + 1]; m];
    let mut cut = vec![vec![0usize; n + 1]; m];
    for b in 0..=n {
        best[0][b] = cost(0, 0, b);
    }
    for v in 1..m {
        for b in 0..=n {
            for a in 0..=b {
                let value = best[v - 1][a].max(cost(v, a, b));
                if value < best[v][b] {
                    best[v][b] = value;
                    cut[v][b] = a;
                }
            }
        }
    }
    if !best[m - 1][n].is_finite() {
        return None;
    }
    let mut routes = vec![Vec::new(); m];
    let mut b = n;
    for v in (0..m).rev() {
        let a = if v == 0 { 0 } else { cut[v][b] };
        routes[v] = block_route(instance, v, &tour[a..b])?;
        b = a;
    }
    Some((routes, best[m - 1][n]))
}

fn order_crossover<R: Rng>(p1: &[usize], p2: &[usize], rng: &mut R) -> Vec<usize> {
    let n = p1.len();
    if n < 2 {
        return p1.to_vec();
    }
    let i = rng.gen_range(0..n);
    let j = rng.gen_range(i..n);
    let mut child = vec![usize::MAX; n];
    child[i..=j].copy_from_slice(&p1[i..=j]);
    let taken: std::collections::HashSet<usize> = p1[i..=j].iter().copied().collect();
    let mut fill = p2.iter().cycle().skip(j + 1).filter(|c| !taken.contains(c));
    for k in (j + 1..n).chain(0..i) {
        child[k] = *fill.next().expect("enough genes");
    }
    child
}

/// Genetic search over giant tours decoded by [`split_tour`]. `initial`
/// replaces the random initial population when given.
pub fn genetic(instance: &Instance, config: &GaConfig, initial: Option<Vec<Vec<usize>>>) -> Result<GaOutcome> {
    config.budget.validate()?;
    if config.population < 4 {
        return Err(Error::Config(format!("population {} is below 4", config.population)));
    }
    if config.tournament == 0 || config.elite >= config.population {
        return Err(Error::Config("tournament must be positive and elite smaller than the population".into()));
    }
    let dist = distance_matrix(instance);
    let mut rng = seeds::rng_for(config.budget.seed, 0x6A, 0);
    let n = instance.n_customers();
    let mut population: Vec<Vec<usize>> = match initial {
        Some(p) => {
            if p.len() != config.population {
                return Err(Error::Config(format!("initial population has {} members", p.len())));
            }
            for tour in &p {
                crate::problem::check_permutation(&tour.iter().map(|c| c.wrapping_sub(1)).collect::<Vec<_>>(), n)?;
            }
            p
        }
        None => {
            let seedling: Vec<usize> = greedy_construction(instance)?
                .routes
                .iter()
                .flatten()
                .copied()
                .filter(|c| *c != 0)
                .collect();
            let mut pop = vec![seedling];
            while pop.len() < config.population {
                let mut t: Vec<usize> = (1..=n).collect();
                t.shuffle(&mut rng);
                pop.push(t);
            }
            pop
        }
    };
    let fitness = |tour: &[usize]| split_tour(instance, &dist, tour).map_or(f64::INFINITY, |(_, f)| f);
    let mut scores: Vec<f64> = population.iter().map(|t| fitness(t)).collect();
    let best_of = |scores: &[f64]| -> usize {
        (0..scores.len()).min_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b))).expect("non-empty")
    };
    let mut history = vec![scores[best_of(&scores)]];
    let clock = config.budget.clock();
    let mut generation = 0;
    while !clock.exhausted(generation) {
        generation += 1;
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)));
        let mut next: Vec<Vec<usize>> = ranked[..config.elite].iter().map(|i| population[*i].clone()).collect();
        let mut next_scores: Vec<f64> = ranked[..config.elite].iter().map(|i| scores[*i]).collect();
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| -> usize {
            (0..config.tournament)
                .map(|_| rng.gen_range(0..population.len()))
                .min_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)))
                .expect("tournament is non-empty")
        };
        while next.len() < config.population {
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            let mut child = order_crossover(&population[a], &population[b], &mut rng);
            if n >= 2 && rng.gen::<f64>() < config.mutation_rate {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                child.swap(i, j);
            }
            next_scores.push(fitness(&child));
            next.push(child);
        }
        population = next;
        scores = next_scores;
        history.push(scores[best_of(&scores)]);
    }
    let winner = best_of(&scores);
    let (routes, _) = split_tour(instance, &dist, &population[winner])
        .ok_or_else(|| Error::Instance(format!("no feasible split for instance {}", instance.id)))?;
    Ok(GaOutcome {
        solution: Solution::from_routes(instance, routes)?,
        best_per_generation: history,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GaSolver {
    pub config: GaConfig,
}

impl Solver for GaSolver {
    fn name(&self) -> String {
        match self.config.budget.max_iterations {
            Some(n) => format!("ga-{n}"),
            None => "ga".into(),
        }
    }

    fn solve(&self, instance: &Instance) -> Result<Solution> {
        Ok(genetic(instance, &self.config, None)?.solution)
    }
}
