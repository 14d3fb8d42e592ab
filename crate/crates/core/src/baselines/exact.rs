use crate::error::{Error, Result};
use crate::inference::Solver;
use crate::mdp::Solution;
use crate::problem::{distance_matrix, DistanceMatrix, Instance};

use super::greedy_construction;

pub const EXACT_MAX_CUSTOMERS: usize = 8;
pub const EXACT_MAX_VEHICLES: usize = 3;

struct Search<'a> {
    instance: &'a Instance,
    dist: DistanceMatrix,
    best: f64,
    best_routes: Vec<Vec<usize>>,
    routes: Vec<Vec<usize>>,
    served: Vec<bool>,
    remaining: usize,
}

impl Search<'_> {
    fn speed(&self, v: usize) -> f64 {
        self.instance.vehicles[v].speed
    }

    fn capacity(&self, v: usize) -> u32 {
        self.instance.vehicles[v].capacity
    }

    /// Lower bound on the final objective from the current partial plan.
    fn bound(&self, v: usize, loc: usize, clock: f64, closed: f64) -> f64 {
        let m = self.instance.n_vehicles();
        let mut lb = closed.max(clock + self.dist.get(loc, 0) / self.speed(v));
        for j in 1..self.instance.n_nodes() {
            if self.served[j] {
                continue;
            }
            let d = self.instance.demand(j);
            let mut cheapest = f64::INFINITY;
            if d <= self.capacity(v) {
                cheapest = clock + (self.dist.get(loc, j) + self.dist.get(j, 0)) / self.speed(v);
            }
            for u in v + 1..m {
                if d <= self.capacity(u) {
                    cheapest = cheapest.min(2.0 * self.dist.get(0, j) / self.speed(u));
                }
            }
            lb = lb.max(cheapest);
        }
        lb
    }

    fn dfs(&mut self, v: usize, loc: usize, clock: f64, load: u32, closed: f64, reloaded: bool) {
        let m = self.instance.n_vehicles();
        if self.remaining == 0 {
            let total = closed.max(clock + self.dist.get(loc, 0) / self.speed(v));
            if total < self.best {
                self.best = total;
                self.best_routes = self.routes.clone();
            }
            return;
        }
        // The slack keeps mirror-image routes alive: they cost the same in
        // exact arithmetic but may round one ulp lower.
        if self.bound(v, loc, clock, closed) > self.best * (1.0 + 1e-12) {
            return;
        }
        let speed = self.speed(v);
        let cap = self.capacity(v);
        let mut order: Vec<usize> = (1..self.instance.n_nodes())
            .filter(|j| !self.served[*j] && load + self.instance.demand(*j) <= cap)
            .collect();
        order.sort_by(|a, b| self.dist.get(loc, *a).total_cmp(&self.dist.get(loc, *b)));
        for j in order {
            self.served[j] = true;
            self.remaining -= 1;
            self.routes[v].push(j);
            let next = clock + self.dist.get(loc, j) / speed;
            self.dfs(v, j, next, load + self.instance.demand(j), closed, false);
            self.routes[v].pop();
            self.remaining += 1;
            self.served[j] = false;
        }
        if reloaded {
            return;
        }
        let fits_fresh = (1..self.instance.n_nodes()).any(|j| !self.served[j] && self.instance.demand(j) <= cap);
        if loc != 0 && fits_fresh {
            self.routes[v].push(0);
            let next = clock + self.dist.get(loc, 0) / speed;
            self.dfs(v, 0, next, 0, closed, true);
            self.routes[v].pop();
        }
        if v + 1 < m {
            let duration = clock + self.dist.get(loc, 0) / speed;
            self.dfs(v + 1, 0, 0.0, 0, closed.max(duration), false);
        }
    }
}

/// Provably optimal solution by depth-first search over complete routes, one
/// vehicle after another, with a travel-time lower bound.
///
/// Limited to `N <= 8` customers and `M <= 3` vehicles.
pub fn exact_small(instance: &Instance) -> Result<Solution> {
    if instance.n_customers() > EXACT_MAX_CUSTOMERS || instance.n_vehicles() > EXACT_MAX_VEHICLES {
        return Err(Error::Config(format!(
            "exact search is limited to N <= {EXACT_MAX_CUSTOMERS}, M <= {EXACT_MAX_VEHICLES}; got N = {}, M = {}",
            instance.n_customers(),
            instance.n_vehicles()
        )));
    }
    let start = greedy_construction(instance)?;
    let mut search = Search {
        instance,
        dist: distance_matrix(instance),
        best: start.objective,
        best_routes: start.routes.clone(),
        routes: vec![Vec::new(); instance.n_vehicles()],
        served: vec![false; instance.n_nodes()],
        remaining: instance.n_customers(),
    };
    search.dfs(0, 0, 0.0, 0, 0.0, false);
    Solution::from_routes(instance, search.best_routes)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSolver;

impl Solver for ExactSolver {
    fn name(&self) -> String {
        "exact".into()
    }

    fn solve(&self, instance: &Instance) -> Result<Solution> {
        exact_small(instance)
    }
}
