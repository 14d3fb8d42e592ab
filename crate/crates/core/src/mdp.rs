//! The autoregressive decision process: one vehicle moves per step, the
//! episode ends once every customer is served, and the return legs are charged
//! when the episode is finalized.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::problem::{DistanceMatrix, Instance};

/// Selecting `vehicle` to travel to `node` (0 is the depot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub vehicle: usize,
    pub node: usize,
}

impl Action {
    pub fn new(vehicle: usize, node: usize) -> Self {
        Action { vehicle, node }
    }
}

/// Feasibility of every vehicle-node pair, vehicle-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    n_vehicles: usize,
    n_nodes: usize,
    feasible: Vec<bool>,
}

impl ActionMask {
    pub fn n_vehicles(&self) -> usize {
        self.n_vehicles
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_feasible(&self, vehicle: usize, node: usize) -> bool {
        self.feasible[vehicle * self.n_nodes + node]
    }

    /// Flattened vehicle-major view.
    pub fn as_slice(&self) -> &[bool] {
        &self.feasible
    }

    pub fn count_feasible(&self) -> usize {
        self.feasible.iter().filter(|f| **f).count()
    }

    pub fn action_at(&self, flat: usize) -> Action {
        Action::new(flat / self.n_nodes, flat % self.n_nodes)
    }

    pub fn flat_index(&self, action: Action) -> usize {
        action.vehicle * self.n_nodes + action.node
    }
}

/// Dynamic state of one rollout.
#[derive(Debug, Clone)]
pub struct FleetState<'a> {
    instance: &'a Instance,
    distances: &'a DistanceMatrix,
    /// Demand carried since the last reload.
    pub used_capacity: Vec<u32>,
    pub clock: Vec<f64>,
    pub location: Vec<usize>,
    pub remaining_demand: Vec<u32>,
    pub step: usize,
    unserved: usize,
    history: Vec<Action>,
}

impl<'a> FleetState<'a> {
    pub fn new(instance: &'a Instance, distances: &'a DistanceMatrix) -> Self {
        let m = instance.n_vehicles();
        let remaining_demand = (0..instance.n_nodes()).map(|j| instance.demand(j)).collect();
        FleetState {
            instance,
            distances,
            used_capacity: vec![0; m],
            clock: vec![0.0; m],
            location: vec![0; m],
            remaining_demand,
            step: 0,
            unserved: instance.n_customers(),
            history: Vec::new(),
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn distances(&self) -> &'a DistanceMatrix {
        self.distances
    }

    pub fn history(&self) -> &[Action] {
        &self.history
    }

    pub fn unserved(&self) -> usize {
        self.unserved
    }

    pub fn remaining_total(&self) -> u64 {
        self.remaining_demand.iter().map(|d| u64::from(*d)).sum()
    }

    pub fn is_terminal(&self) -> bool {
        self.unserved == 0
    }

    #[inline]
    pub fn is_feasible(&self, vehicle: usize, node: usize) -> bool {
        let demand = self.remaining_demand[node];
        if node != 0 && demand == 0 {
            return false;
        }
        if node == 0 && self.location[vehicle] == 0 {
            return false;
        }
        self.instance.vehicles[vehicle].capacity - self.used_capacity[vehicle] >= demand
    }

    pub fn action_mask(&self) -> Result<ActionMask> {
        if self.is_terminal() {
            return Err(Error::Contract("action mask requested on a terminal state".into()));
        }
        let (m, n) = (self.instance.n_vehicles(), self.instance.n_nodes());
        let mut feasible = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                feasible.push(self.is_feasible(i, j));
            }
        }
        if !feasible.iter().any(|f| *f) {
            return Err(Error::Contract(format!(
                "every vehicle-node pair is masked at step {} of instance {}",
                self.step, self.instance.id
            )));
        }
        Ok(ActionMask {
            n_vehicles: m,
            n_nodes: n,
            feasible,
        })
    }

    pub fn step(&mut self, action: Action) -> Result<()> {
        let Action { vehicle, node } = action;
        if vehicle >= self.instance.n_vehicles() || node >= self.instance.n_nodes() {
            return Err(Error::Contract(format!("action {action:?} is out of range")));
        }
        if self.is_terminal() || !self.is_feasible(vehicle, node) {
            return Err(Error::Contract(format!(
                "action {action:?} is masked at step {}",
                self.step
            )));
        }
        let demand = self.remaining_demand[node];
        if node == 0 {
            self.used_capacity[vehicle] = 0;
        } else {
            self.used_capacity[vehicle] += demand;
            self.remaining_demand[node] = 0;
            self.unserved -= 1;
        }
        let leg = self.distances.get(self.location[vehicle], node);
        self.clock[vehicle] += leg / self.instance.vehicles[vehicle].speed;
        self.location[vehicle] = node;
        self.step += 1;
        self.history.push(action);
        Ok(())
    }

    /// Routes as recorded so far, one per vehicle.
    pub fn routes(&self) -> Vec<Vec<usize>> {
        let mut routes = vec![Vec::new(); self.instance.n_vehicles()];
        for a in &self.history {
            routes[a.vehicle].push(a.node);
        }
        routes
    }

    /// Charges the return legs and returns `(reward, solution)`.
    pub fn finalize(&self) -> Result<(f64, Solution)> {
        if !self.is_terminal() {
            return Err(Error::Contract(format!(
                "finalize called with {} customers unserved",
                self.unserved
            )));
        }
        let durations: Vec<f64> = (0..self.instance.n_vehicles())
            .map(|i| {
                let back = self.distances.get(self.location[i], 0);
                self.clock[i] + back / self.instance.vehicles[i].speed
            })
            .collect();
        let objective = durations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let solution = Solution {
            instance_id: self.instance.id.clone(),
            objective,
            routes: self.routes(),
            durations,
        };
        Ok((-objective, solution))
    }
}

/// Per-vehicle routes with their evaluated durations.
///
/// Routes list visited nodes in order, including mid-route depot reloads but
/// excluding the implicit departure from and final return to the depot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub instance_id: String,
    pub objective: f64,
    pub routes: Vec<Vec<usize>>,
    pub durations: Vec<f64>,
}

impl Solution {
    /// Evaluates `routes` on `instance` and packages the result.
    pub fn from_routes(instance: &Instance, routes: Vec<Vec<usize>>) -> Result<Solution> {
        let durations = route_durations(instance, &routes)?;
        let objective = durations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Solution {
            instance_id: instance.id.clone(),
            objective,
            routes,
            durations,
        })
    }
}

/// Validates `routes` and returns each vehicle's duration.
///
/// Legs are accumulated in visiting order, exactly as the decision process
/// advances its clocks.
pub fn route_durations(instance: &Instance, routes: &[Vec<usize>]) -> Result<Vec<f64>, ValidationError> {
    if routes.len() != instance.n_vehicles() {
        return Err(ValidationError::RouteCount {
            expected: instance.n_vehicles(),
            found: routes.len(),
        });
    }
    let n_nodes = instance.n_nodes();
    let mut seen = vec![false; n_nodes];
    let mut durations = Vec::with_capacity(routes.len());
    for (i, route) in routes.iter().enumerate() {
        let vehicle = instance.vehicles[i];
        let mut load: u64 = 0;
        let mut at = 0usize;
        let mut clock = 0.0;
        for &node in route {
            if node >= n_nodes {
                return Err(ValidationError::UnknownNode { vehicle: i, node });
            }
            if node == 0 {
                load = 0;
            } else {
                if seen[node] {
                    return Err(ValidationError::DuplicateVisit { vehicle: i, node });
                }
                seen[node] = true;
                load += u64::from(instance.demand(node));
                if load > u64::from(vehicle.capacity) {
                    return Err(ValidationError::CapacityExceeded {
                        vehicle: i,
                        node,
                        load,
                        capacity: vehicle.capacity,
                    });
                }
            }
            clock += leg(instance, at, node) / vehicle.speed;
            at = node;
        }
        clock += leg(instance, at, 0) / vehicle.speed;
        durations.push(clock);
    }
    if let Some(node) = (1..n_nodes).find(|j| !seen[*j]) {
        return Err(ValidationError::MissingCustomer { node });
    }
    Ok(durations)
}

fn leg(instance: &Instance, a: usize, b: usize) -> f64 {
    let (pa, pb) = (instance.coords(a), instance.coords(b));
    (pa[0] - pb[0]).hypot(pa[1] - pb[1])
}

/// Min-max objective of `routes`: the longest vehicle duration.
pub fn evaluate_solution(instance: &Instance, routes: &[Vec<usize>]) -> Result<f64, ValidationError> {
    let durations = route_durations(instance, routes)?;
    Ok(durations.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionRecord {
    instance_id: String,
    objective: f64,
    routes: Vec<Vec<usize>>,
    durations: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

pub fn solution_to_string(solution: &Solution, provenance: Option<&serde_json::Value>) -> String {
    let record = SolutionRecord {
        instance_id: solution.instance_id.clone(),
        objective: solution.objective,
        routes: solution.routes.clone(),
        durations: solution.durations.clone(),
        provenance: provenance.cloned(),
    };
    let mut text = serde_json::to_string_pretty(&record).expect("solution record serializes");
    text.push('\n');
    text
}

pub fn write_solution(
    solution: &Solution,
    provenance: Option<&serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, solution_to_string(solution, provenance)).map_err(|e| Error::io(path, e))
}

pub fn read_solution(path: impl AsRef<Path>) -> Result<Solution> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: SolutionRecord = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    Ok(Solution {
        instance_id: record.instance_id,
        objective: record.objective,
        routes: record.routes,
        durations: record.durations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{distance_matrix, generate_instance, Customer, Distribution, GenConfig, Vehicle};
    use rand::{Rng, SeedableRng};

    fn line_instance(customers: &[(f64, f64, u32)], vehicles: &[(u32, f64)]) -> Instance {
        Instance::new(
            "line",
            Distribution::Uniform,
            [0.0, 0.0],
            customers.iter().map(|&(x, y, demand)| Customer { x, y, demand }).collect(),
            vehicles.iter().map(|&(capacity, speed)| Vehicle { capacity, speed }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn fresh_state_is_at_rest() {
        let inst = generate_instance(&GenConfig::new(8, 3, 2)).unwrap();
        let d = distance_matrix(&inst);
        let s = FleetState::new(&inst, &d);
        assert!(s.clock.iter().all(|c| *c == 0.0));
        assert!(s.location.iter().all(|l| *l == 0));
        assert_eq!(s.remaining_total(), inst.total_demand());
        assert!(!s.is_terminal());
        let mask = s.action_mask().unwrap();
        assert!((0..3).all(|i| !mask.is_feasible(i, 0)));
    }

    #[test]
    fn capacity_rule_in_mask() {
        let inst = line_instance(&[(0.1, 0.0, 5), (0.2, 0.0, 2), (0.3, 0.0, 18)], &[(20, 1.0)]);
        let d = distance_matrix(&inst);
        let mut s = FleetState::new(&inst, &d);
        s.step(Action::new(0, 3)).unwrap();
        assert_eq!(s.used_capacity[0], 18);
        let mask = s.action_mask().unwrap();
        assert!(!mask.is_feasible(0, 1), "20 - 18 < 5");
        assert!(mask.is_feasible(0, 2), "20 - 18 >= 2");
        assert!(!mask.is_feasible(0, 3), "already served");
        assert!(mask.is_feasible(0, 0), "away from depot may reload");
    }

    #[test]
    fn step_arithmetic() {
        let inst = line_instance(&[(0.0, 0.5, 4)], &[(20, 0.5)]);
        let d = distance_matrix(&inst);
        let mut s = FleetState::new(&inst, &d);
        s.step(Action::new(0, 1)).unwrap();
        assert_eq!(s.clock[0], 1.0);
        assert_eq!(s.used_capacity[0], 4);
        assert_eq!(s.remaining_demand[1], 0);
        assert!(s.is_terminal());
        assert!(s.action_mask().is_err());
    }

    #[test]
    fn depot_visit_resets_load_only() {
        let inst = line_instance(&[(0.1, 0.0, 9), (0.2, 0.0, 8), (0.3, 0.0, 3)], &[(20, 1.0)]);
        let d = distance_matrix(&inst);
        let mut s = FleetState::new(&inst, &d);
        s.step(Action::new(0, 1)).unwrap();
        s.step(Action::new(0, 2)).unwrap();
        assert_eq!(s.used_capacity[0], 17);
        let before = s.remaining_demand.clone();
        s.step(Action::new(0, 0)).unwrap();
        assert_eq!(s.used_capacity[0], 0);
        assert_eq!(s.remaining_demand, before);
        assert!(s.step(Action::new(0, 0)).is_err(), "depot twice is masked");
    }

    #[test]
    fn masked_action_is_a_contract_violation() {
        let inst = line_instance(&[(0.1, 0.0, 9)], &[(20, 1.0)]);
        let d = distance_matrix(&inst);
        let mut s = FleetState::new(&inst, &d);
        assert!(matches!(s.step(Action::new(0, 0)), Err(Error::Contract(_))));
        assert!(matches!(s.step(Action::new(1, 1)), Err(Error::Contract(_))));
    }

    #[test]
    fn replay_matches_straight_line_update_rules() {
        let inst = generate_instance(&GenConfig::new(6, 2, 19)).unwrap();
        let d = distance_matrix(&inst);
        let mut s = FleetState::new(&inst, &d);
        let actions = [Action::new(1, 3), Action::new(0, 5), Action::new(1, 2)];
        for a in actions {
            s.step(a).unwrap();
        }
        // Independent replay with plain arithmetic on coordinates.
        let mut load = [0u32; 2];
        let mut clock = [0.0f64; 2];
        let mut loc = [0usize; 2];
        let mut demand: Vec<u32> = (0..7).map(|j| inst.demand(j)).collect();
        for a in actions {
            let (p, q) = (inst.coords(loc[a.vehicle]), inst.coords(a.node));
            clock[a.vehicle] += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() / inst.vehicles[a.vehicle].speed;
            load[a.vehicle] += demand[a.node];
            demand[a.node] = 0;
            loc[a.vehicle] = a.node;
        }
        assert_eq!(s.used_capacity, load.to_vec());
        assert_eq!(s.location, loc.to_vec());
        assert_eq!(s.remaining_demand, demand);
        for i in 0..2 {
            assert!((s.clock[i] - clock[i]).abs() < 1e-12);
        }
        assert_eq!(s.step, 3);
    }

    #[test]
    fn finalize_charges_return_legs() {
        let inst = line_instance(&[(0.2, 0.0, 1), (0.0, 0.1, 1)], &[(20, 1.0), (20, 1.0)]);
        let d = distance_matrix(&inst);
        let mut s = FleetState::new(&inst, &d);
        s.step(Action::new(1, 2)).unwrap();
        s.step(Action::new(1, 0)).unwrap();
        assert!(s.finalize().is_err());
        s.step(Action::new(0, 1)).unwrap();
        let (reward, sol) = s.finalize().unwrap();
        assert_eq!(sol.durations[0], 0.4);
        assert_eq!(sol.durations[1], 0.2);
        assert_eq!(reward, -0.4);
        assert_eq!(sol.routes, vec![vec![1], vec![2, 0]]);
    }

    #[test]
    fn finalize_rejects_open_episode() {
        let inst = line_instance(&[(0.2, 0.0, 1)], &[(20, 1.0)]);
        let d = distance_matrix(&inst);
        assert!(FleetState::new(&inst, &d).finalize().is_err());
    }

    #[test]
    fn evaluate_small_cases() {
        let inst = line_instance(&[(0.0, 0.3, 1)], &[(20, 1.0)]);
        assert!((evaluate_solution(&inst, &[vec![1]]).unwrap() - 0.6).abs() < 1e-15);

        let inst = line_instance(&[(0.0, 0.3, 1), (0.3, 0.0, 1)], &[(20, 0.5), (20, 1.0)]);
        let v = evaluate_solution(&inst, &[vec![1], vec![2]]).unwrap();
        assert!((v - 1.2).abs() < 1e-12);
    }

    #[test]
    fn evaluate_reports_distinct_errors() {
        let inst = line_instance(&[(0.0, 0.3, 6), (0.3, 0.0, 6)], &[(10, 1.0), (10, 1.0)]);
        assert_eq!(
            evaluate_solution(&inst, &[vec![1], vec![]]),
            Err(ValidationError::MissingCustomer { node: 2 })
        );
        assert_eq!(
            evaluate_solution(&inst, &[vec![1, 2], vec![1]]),
            Err(ValidationError::CapacityExceeded { vehicle: 0, node: 2, load: 12, capacity: 10 })
        );
        assert_eq!(
            evaluate_solution(&inst, &[vec![1, 0, 2], vec![1]]),
            Err(ValidationError::DuplicateVisit { vehicle: 1, node: 1 })
        );
        assert_eq!(
            evaluate_solution(&inst, &[vec![1, 7], vec![2]]),
            Err(ValidationError::UnknownNode { vehicle: 0, node: 7 })
        );
        assert!(matches!(
            evaluate_solution(&inst, &[vec![1, 2]]),
            Err(ValidationError::RouteCount { .. })
        ));
        assert!(evaluate_solution(&inst, &[vec![1, 0, 2], vec![]]).is_ok());
    }

    #[test]
    fn evaluate_matches_leg_sum_oracle() {
        let inst = generate_instance(&GenConfig::new(5, 2, 4)).unwrap();
        let routes = vec![vec![1, 4, 0, 2], vec![5, 3]];
        let got = evaluate_solution(&inst, &routes).unwrap();
        let mut worst: f64 = 0.0;
        for (i, r) in routes.iter().enumerate() {
            let mut path = vec![0];
            path.extend(r);
            path.push(0);
            let length: f64 = path
                .windows(2)
                .map(|w| {
                    let (a, b) = (inst.coords(w[0]), inst.coords(w[1]));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
                .sum();
            worst = worst.max(length / inst.vehicles[i].speed);
        }
        assert!((got - worst).abs() < 1e-12);
    }

    #[test]
    fn random_rollouts_terminate_and_agree_with_evaluation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for seed in 0..50 {
            let inst = generate_instance(&GenConfig::new(12, 3, seed)).unwrap();
            let d = distance_matrix(&inst);
            let mut s = FleetState::new(&inst, &d);
            let bound = inst.n_customers() * (1 + inst.n_vehicles());
            let mut remaining = s.remaining_total();
            while !s.is_terminal() {
                let mask = s.action_mask().unwrap();
                let options: Vec<usize> = (0..mask.as_slice().len()).filter(|k| mask.as_slice()[*k]).collect();
                let a = mask.action_at(options[rng.gen_range(0..options.len())]);
                let served = inst.demand(a.node) as u64 * u64::from(a.node != 0);
                s.step(a).unwrap();
                assert_eq!(s.remaining_total(), remaining - served);
                remaining = s.remaining_total();
                assert!(s.step <= bound);
            }
            let (reward, sol) = s.finalize().unwrap();
            assert_eq!(-reward, evaluate_solution(&inst, &sol.routes).unwrap());
        }
    }

    #[test]
    fn one_customer_left_is_not_terminal() {
        let inst = generate_instance(&GenConfig::new(4, 2, 9)).unwrap();
        let d = distance_matrix(&inst);
        let mut s = FleetState::new(&inst, &d);
        for j in 1..4 {
            s.step(Action::new(0, j)).unwrap();
            s.step(Action::new(0, 0)).unwrap();
        }
        assert!(!s.is_terminal());
        s.step(Action::new(1, 4)).unwrap();
        assert!(s.is_terminal());
    }

    #[test]
    fn solution_file_round_trip() {
        let inst = generate_instance(&GenConfig::new(5, 2, 4)).unwrap();
        let sol = Solution::from_routes(&inst, vec![vec![1, 4, 0, 2], vec![5, 3]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        write_solution(&sol, Some(&serde_json::json!({"solver": "test"})), &path).unwrap();
        assert_eq!(read_solution(&path).unwrap(), sol);
    }
}
