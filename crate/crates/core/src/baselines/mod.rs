//! Reference solvers: an exact search for tiny instances, simulated annealing
//! and a genetic algorithm, plus the constructive heuristic they start from.

mod construct;
mod exact;
mod ga;
mod sa;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Solver;
use crate::mdp::Solution;
use crate::problem::{DistanceMatrix, Instance};

pub use construct::greedy_construction;
pub use exact::{exact_small, ExactSolver, EXACT_MAX_CUSTOMERS, EXACT_MAX_VEHICLES};
pub use ga::{genetic, split_tour, GaConfig, GaOutcome, GaSolver};
pub use sa::{simulated_annealing, SaConfig, SaOutcome, SaSolver};

/// Limits for iterative heuristics. Iteration limits keep runs reproducible;
/// a time limit makes the result depend on machine speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_iterations: Option<u64>,
    pub max_seconds: Option<f64>,
    pub seed: u64,
}

impl SearchBudget {
    pub fn iterations(max_iterations: u64, seed: u64) -> Self {
        SearchBudget {
            max_iterations: Some(max_iterations),
            max_seconds: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.max_iterations, self.max_seconds) {
            (None, None) => Err(Error::Config("a search budget needs an iteration or time limit".into())),
            (_, Some(s)) if !(s.is_finite() && s >= 0.0) => Err(Error::Config(format!("invalid time limit {s}"))),
            _ => Ok(()),
        }
    }

    pub(crate) fn clock(&self) -> BudgetClock {
        BudgetClock {
            budget: *self,
            started: Instant::now(),
        }
    }
}

pub(crate) struct BudgetClock {
    budget: SearchBudget,
    started: Instant,
}

impl BudgetClock {
    pub(crate) fn exhausted(&self, iteration: u64) -> bool {
        if self.budget.max_iterations.is_some_and(|m| iteration >= m) {
            return true;
        }
        match self.budget.max_seconds {
            Some(s) => self.started.elapsed().as_secs_f64() >= s,
            None => false,
        }
    }
}

/// Duration of one vehicle's route, or `None` if a segment between reloads
/// exceeds the capacity. Legs accumulate in visiting order, matching
/// [`crate::mdp::evaluate_solution`] bit for bit.
pub(crate) fn route_time(instance: &Instance, dist: &DistanceMatrix, vehicle: usize, route: &[usize]) -> Option<f64> {
    let v = &instance.vehicles[vehicle];
    let mut load = 0u32;
    let mut at = 0;
    let mut clock = 0.0;
    for &node in route {
        if node == 0 {
            load = 0;
        } else {
            load += instance.demand(node);
            if load > v.capacity {
                return None;
            }
        }
        clock += dist.get(at, node) / v.speed;
        at = node;
    }
    Some(clock + dist.get(at, 0) / v.speed)
}

/// Drops leading, trailing and repeated reload markers.
pub(crate) fn normalize_route(route: &mut Vec<usize>) {
    let mut out = Vec::with_capacity(route.len());
    for &node in route.iter() {
        if node == 0 && out.last().is_none_or(|l| *l == 0) {
            continue;
        }
        out.push(node);
    }
    while out.last() == Some(&0) {
        out.pop();
    }
    *route = out;
}

/// Constructive heuristic as a [`Solver`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstructionSolver;

impl Solver for ConstructionSolver {
    fn name(&self) -> String {
        "construction".into()
    }

    fn solve(&self, instance: &Instance) -> Result<Solution> {
        greedy_construction(instance)
    }
}
