use echo_vrp::baselines::*;
use echo_vrp::inference::Solver;
use echo_vrp::mdp::{evaluate_solution, Action, FleetState};
use echo_vrp::problem::{distance_matrix, generate_instance, Customer, Distribution, GenConfig, Instance, Vehicle};
use echo_vrp::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(m: usize, n: usize, seed: u64) -> Instance {
    generate_instance(&GenConfig::new(n, m, seed)).unwrap()
}

fn hand_made(points: &[(f64, f64)], vehicles: usize) -> Instance {
    Instance::new(
        "hand",
        Distribution::Uniform,
        [0.0, 0.0],
        points.iter().map(|&(x, y)| Customer { x, y, demand: 1 }).collect(),
        vec![Vehicle { capacity: 10, speed: 1.0 }; vehicles],
    )
    .unwrap()
}

/// Uniformly random feasible action sequence, as a route list.
fn random_solution(inst: &Instance, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let dist = distance_matrix(inst);
    let mut state = FleetState::new(inst, &dist);
    while !state.is_terminal() {
        let mask = state.action_mask().unwrap();
        let open: Vec<usize> = (0..mask.as_slice().len()).filter(|i| mask.as_slice()[*i]).collect();
        state.step(mask.action_at(open[rng.gen_range(0..open.len())])).unwrap();
    }
    state.routes()
}

#[test]
fn exact_chain_on_a_line() {
    let inst = hand_made(&[(0.5, 0.0), (1.0, 0.0)], 1);
    let sol = exact_small(&inst).unwrap();
    assert!((sol.objective - 2.0).abs() < 1e-12);
    assert_eq!(sol.routes[0].iter().filter(|c| **c != 0).count(), 2);
}

#[test]
fn exact_splits_between_two_vehicles() {
    let inst = hand_made(&[(0.0, 0.5), (0.5, 0.0)], 2);
    let sol = exact_small(&inst).unwrap();
    assert!((sol.objective - 1.0).abs() < 1e-12);
    // Brute force over the assignments: both on one vehicle costs 1 + sqrt(0.5).
    let single = evaluate_solution(&inst, &[vec![1, 2], vec![]]).unwrap();
    assert!((single - (1.0 + 0.5f64.sqrt())).abs() < 1e-12);
    assert!(sol.objective < single);
}

#[test]
fn exact_respects_size_guard() {
    let inst = instance(2, 9, 1);
    assert!(matches!(exact_small(&inst), Err(Error::Config(_))));
    let inst = instance(4, 5, 1);
    assert!(matches!(exact_small(&inst), Err(Error::Config(_))));
}

#[test]
fn exact_is_never_beaten_by_random_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let inst = instance(2, 5, seed);
        let exact = exact_small(&inst).unwrap();
        assert_eq!(evaluate_solution(&inst, &exact.routes).unwrap(), exact.objective);
        for _ in 0..1000 {
            let routes = random_solution(&inst, &mut rng);
            assert!(evaluate_solution(&inst, &routes).unwrap() >= exact.objective);
        }
    }
}

#[test]
fn exact_handles_largest_guarded_size() {
    let inst = instance(3, 8, 5);
    let sol = exact_small(&inst).unwrap();
    assert!(sol.objective <= greedy_construction(&inst).unwrap().objective);
}

#[test]
fn construction_is_feasible() {
    for seed in 0..20 {
        let inst = instance(3, 20, seed);
        let sol = greedy_construction(&inst).unwrap();
        assert_eq!(evaluate_solution(&inst, &sol.routes).unwrap(), sol.objective);
    }
}

#[test]
fn sa_zero_budget_returns_construction() {
    let inst = instance(2, 8, 3);
    let out = simulated_annealing(&inst, &SaConfig::new(SearchBudget::iterations(0, 1))).unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(out.solution, greedy_construction(&inst).unwrap());
}

#[test]
fn sa_trace_is_non_increasing_and_deterministic() {
    let inst = instance(3, 12, 4);
    let mut cfg = SaConfig::new(SearchBudget::iterations(5000, 9));
    cfg.record_trace = true;
    let out = simulated_annealing(&inst, &cfg).unwrap();
    assert_eq!(out.trace.len(), 5000);
    assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(out.solution.objective <= out.initial_objective);
    assert_eq!(*out.trace.last().unwrap(), out.solution.objective);
    assert_eq!(evaluate_solution(&inst, &out.solution.routes).unwrap(), out.solution.objective);
    assert_eq!(out, simulated_annealing(&inst, &cfg).unwrap());
}

#[test]
fn sa_close_to_exact_on_a_few_instances() {
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let inst = instance(2, 6, 100 + seed);
        let exact = exact_small(&inst).unwrap().objective;
        let sa = simulated_annealing(&inst, &SaConfig::new(SearchBudget::iterations(50_000, seed))).unwrap();
        assert!(sa.solution.objective >= exact - 1e-12);
        gaps.push(sa.solution.objective / exact - 1.0);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean <= 0.02, "mean gap {mean}");
}

#[test]
fn budget_validation() {
    let none = SearchBudget {
        max_iterations: None,
        max_seconds: None,
        seed: 0,
    };
    assert!(none.validate().is_err());
    let inst = instance(2, 5, 0);
    assert!(simulated_annealing(&inst, &SaConfig::new(none)).is_err());
    let mut ga = GaConfig::new(SearchBudget::iterations(5, 0));
    ga.population = 3;
    assert!(matches!(genetic(&inst, &ga, None), Err(Error::Config(_))));
    let timed = SearchBudget {
        max_iterations: None,
        max_seconds: Some(0.05),
        seed: 0,
    };
    assert!(simulated_annealing(&inst, &SaConfig::new(timed)).is_ok());
}

#[test]
fn ga_identical_population_without_mutation_is_constant() {
    let inst = instance(2, 7, 6);
    let mut cfg = GaConfig::new(SearchBudget::iterations(20, 2));
    cfg.mutation_rate = 0.0;
    let tour: Vec<usize> = (1..=7).rev().collect();
    let out = genetic(&inst, &cfg, Some(vec![tour; cfg.population])).unwrap();
    assert_eq!(out.best_per_generation.len(), 21);
    assert!(out.best_per_generation.iter().all(|v| *v == out.best_per_generation[0]));
}

#[test]
fn ga_outputs_are_valid_and_deterministic() {
    for seed in 0..5 {
        let inst = instance(3, 15, seed);
        let cfg = GaConfig::new(SearchBudget::iterations(30, seed));
        let out = genetic(&inst, &cfg, None).unwrap();
        assert_eq!(evaluate_solution(&inst, &out.solution.routes).unwrap(), out.solution.objective);
        assert_eq!(out.solution.objective, *out.best_per_generation.last().unwrap());
        // Elitism keeps the best individual.
        assert!(out.best_per_generation.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out, genetic(&inst, &cfg, None).unwrap());
    }
}

#[test]
fn ga_rejects_non_permutation_seeds() {
    let inst = instance(2, 4, 0);
    let cfg = GaConfig::new(SearchBudget::iterations(1, 0));
    let bad = vec![vec![1, 1, 2, 3]; cfg.population];
    assert!(genetic(&inst, &cfg, Some(bad)).is_err());
}

#[test]
fn split_matches_brute_force_cuts() {
    let inst = instance(3, 6, 8);
    let dist = distance_matrix(&inst);
    let tour = vec![3, 1, 6, 2, 5, 4];
    let (routes, value) = split_tour(&inst, &dist, &tour).unwrap();
    assert_eq!(evaluate_solution(&inst, &routes).unwrap(), value);
    let mut best = f64::INFINITY;
    for a in 0..=6 {
        for b in a..=6 {
            let blocks = [&tour[..a], &tour[a..b], &tour[b..]];
            let routes: Vec<Vec<usize>> = blocks
                .iter()
                .enumerate()
                .map(|(v, block)| {
                    let cap = inst.vehicles[v].capacity;
                    let (mut r, mut load) = (Vec::new(), 0);
                    for &c in *block {
                        if load + inst.demand(c) > cap {
                            r.push(0);
                            load = 0;
                        }
                        r.push(c);
                        load += inst.demand(c);
                    }
                    r
                })
                .collect();
            best = best.min(evaluate_solution(&inst, &routes).unwrap());
        }
    }
    assert_eq!(value, best);
}

#[test]
fn solver_names() {
    assert_eq!(ExactSolver.name(), "exact");
    assert_eq!(SaSolver { config: SaConfig::new(SearchBudget::iterations(50_000, 0)) }.name(), "sa-50000");
    assert_eq!(GaSolver { config: GaConfig::new(SearchBudget::iterations(100, 0)) }.name(), "ga-100");
    let inst = instance(2, 5, 0);
    assert_eq!(ConstructionSolver.solve(&inst).unwrap(), greedy_construction(&inst).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heuristics_never_beat_exact(seed in 0u64..10_000, m in 1usize..=3, n in 1usize..=6) {
        let inst = instance(m, n, seed);
        let exact = exact_small(&inst).unwrap().objective;
        let sa = simulated_annealing(&inst, &SaConfig::new(SearchBudget::iterations(2000, seed))).unwrap();
        let ga = genetic(&inst, &GaConfig::new(SearchBudget::iterations(10, seed)), None).unwrap();
        prop_assert!(sa.solution.objective >= exact);
        prop_assert!(ga.solution.objective >= exact);
        prop_assert!(greedy_construction(&inst).unwrap().objective >= exact);
    }
}

#[test]
fn unused_action_import_guard() {
    // Keeps the mdp Action type exercised alongside the solvers.
    let inst = hand_made(&[(0.5, 0.0)], 1);
    let dist = distance_matrix(&inst);
    let mut s = FleetState::new(&inst, &dist);
    s.step(Action::new(0, 1)).unwrap();
    assert!(s.is_terminal());
}
