use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Solver;
use crate::mdp::Solution;
use crate::problem::{distance_matrix, DistanceMatrix, Instance};
use crate::seeds;

use super::{greedy_construction, normalize_route, route_time, SearchBudget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub budget: SearchBudget,
    /// Initial temperature as a fraction of the initial objective.
    pub initial_temperature: f64,
    pub cooling: f64,
    /// Iterations between two cooling steps.
    pub cooling_interval: u64,
    /// Keep the best-so-far objective after every iteration.
    pub record_trace: bool,
}

impl SaConfig {
    pub fn new(budget: SearchBudget) -> Self {
        SaConfig {
            budget,
            initial_temperature: 0.1,
            cooling: 0.995,
            cooling_interval: 100,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaOutcome {
    pub solution: Solution,
    pub initial_objective: f64,
    pub iterations: u64,
    pub accepted: u64,
    /// Best-so-far objective after each iteration, when recorded.
    pub trace: Vec<f64>,
}

struct Plan<'a> {
    instance: &'a Instance,
    dist: &'a DistanceMatrix,
    routes: Vec<Vec<usize>>,
    times: Vec<f64>,
}

impl Plan<'_> {
    fn objective(&self) -> f64 {
        self.times.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn customers(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, route) in self.routes.iter().enumerate() {
            for (p, node) in route.iter().enumerate() {
                if *node != 0 {
                    out.push((r, p));
                }
            }
        }
        out
    }

    /// Proposes a neighbor; returns the touched routes with their new content,
    /// or `None` when the move does not apply.
    fn propose<R: Rng>(&self, rng: &mut R) -> Option<Vec<(usize, Vec<usize>)>> {
        let m = self.routes.len();
        let customers = self.customers();
        match rng.gen_range(0..4) {
            0 => {
                let (a, p) = customers[rng.gen_range(0..customers.len())];
                let b = rng.gen_range(0..m);
                let mut ra = self.routes[a].clone();
                let node = ra.remove(p);
                if a == b {
                    let q = rng.gen_range(0..=ra.len());
                    ra.insert(q, node);
                    Some(vec![(a, ra)])
                } else {
                    let mut rb = self.routes[b].clone();
                    let q = rng.gen_range(0..=rb.len());
                    rb.insert(q, node);
                    Some(vec![(a, ra), (b, rb)])
                }
            }
            1 => {
                if customers.len() < 2 {
                    return None;
                }
                let i = rng.gen_range(0..customers.len());
                let mut j = rng.gen_range(0..customers.len() - 1);
                if j >= i {
                    j += 1;
                }
                let ((a, p), (b, q)) = (customers[i], customers[j]);
                if a == b {
                    let mut ra = self.routes[a].clone();
                    ra.swap(p, q);
                    Some(vec![(a, ra)])
                } else {
                    let mut ra = self.routes[a].clone();
                    let mut rb = self.routes[b].clone();
                    std::mem::swap(&mut ra[p], &mut rb[q]);
                    Some(vec![(a, ra), (b, rb)])
                }
            }
            2 => {
                let a = rng.gen_range(0..m);
                let len = self.routes[a].len();
                if len < 2 {
                    return None;
                }
                let i = rng.gen_range(0..len - 1);
                let j = rng.gen_range(i + 1..len);
                let mut ra = self.routes[a].clone();
                ra[i..=j].reverse();
                Some(vec![(a, ra)])
            }
            _ => {
                let a = rng.gen_range(0..m);
                let mut ra = self.routes[a].clone();
                let reloads: Vec<usize> = (0..ra.len()).filter(|p| ra[*p] == 0).collect();
                match rng.gen_range(0..3) {
                    0 if ra.len() >= 2 => {
                        let p = rng.gen_range(1..ra.len());
                        ra.insert(p, 0);
                    }
                    1 if !reloads.is_empty() => {
                        ra.remove(reloads[rng.gen_range(0..reloads.len())]);
                    }
                    2 if !reloads.is_empty() => {
                        // Shift the reload by one stop, moving a customer to
                        // the other side of it.
                        let p = reloads[rng.gen_range(0..reloads.len())];
                        let q = if rng.gen_bool(0.5) { p.wrapping_sub(1) } else { p + 1 };
                        if q >= ra.len() {
                            return None;
                        }
                        ra.swap(p, q);
                    }
                    _ => return None,
                }
                Some(vec![(a, ra)])
            }
        }
    }
}

/// Simulated annealing over route plans with reload markers, starting from
/// [`greedy_construction`]. Deterministic under the budget seed when only an
/// iteration limit is set.
pub fn simulated_annealing(instance: &Instance, config: &SaConfig) -> Result<SaOutcome> {
    config.budget.validate()?;
    if !(config.cooling > 0.0 && config.cooling <= 1.0) || config.cooling_interval == 0 {
        return Err(Error::Config("cooling factor must lie in (0, 1] and the interval be positive".into()));
    }
    let start = greedy_construction(instance)?;
    let dist = distance_matrix(instance);
    let mut plan = Plan {
        instance,
        dist: &dist,
        routes: start.routes.clone(),
        times: start.durations.clone(),
    };
    let mut rng = seeds::rng_for(config.budget.seed, 0x5A, 0);
    let mut current = plan.objective();
    let mut best = current;
    let mut best_routes = plan.routes.clone();
    let mut temperature = current * config.initial_temperature;
    let clock = config.budget.clock();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut accepted = 0;

    while !clock.exhausted(iterations) {
        iterations += 1;
        if iterations % config.cooling_interval == 0 {
            temperature *= config.cooling;
        }
        if let Some(mut changes) = plan.propose(&mut rng) {
            let mut feasible = true;
            let mut times = Vec::with_capacity(changes.len());
            for (r, route) in changes.iter_mut() {
                normalize_route(route);
                match route_time(plan.instance, plan.dist, *r, route) {
                    Some(t) => times.push(t),
                    None => {
                        feasible = false;
                        break;
                    }
                }
            }
            if feasible {
                let candidate = plan
                    .times
                    .iter()
                    .enumerate()
                    .map(|(i, t)| changes.iter().position(|(r, _)| *r == i).map_or(*t, |k| times[k]))
                    .fold(f64::NEG_INFINITY, f64::max);
                let delta = candidate - current;
                let accept = delta <= 0.0 || (temperature > 0.0 && rng.gen::<f64>() < (-delta / temperature).exp());
                if accept {
                    accepted += 1;
                    for ((r, route), t) in changes.into_iter().zip(times) {
                        plan.routes[r] = route;
                        plan.times[r] = t;
                    }
                    current = candidate;
                    if current < best {
                        best = current;
                        best_routes = plan.routes.clone();
                    }
                }
            }
        }
        if config.record_trace {
            trace.push(best);
        }
    }
    let solution = Solution::from_routes(instance, best_routes)?;
    Ok(SaOutcome {
        solution,
        initial_objective: start.objective,
        iterations,
        accepted,
        trace,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SaSolver {
    pub config: SaConfig,
}

impl Solver for SaSolver {
    fn name(&self) -> String {
        match self.config.budget.max_iterations {
            Some(n) => format!("sa-{n}"),
            None => "sa".into(),
        }
    }

    fn solve(&self, instance: &Instance) -> Result<Solution> {
        Ok(simulated_annealing(instance, &self.config)?.solution)
    }
}
