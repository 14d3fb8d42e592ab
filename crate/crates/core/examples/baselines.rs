//! Exact search against the heuristics on small instances.
//!
//! `cargo run --release --example baselines`

use echo_vrp::baselines::{exact_small, ConstructionSolver, GaConfig, GaSolver, SaConfig, SaSolver, SearchBudget};
use echo_vrp::inference::{gap, Solver};
use echo_vrp::problem::{generate_instance, GenConfig};

fn main() -> echo_vrp::Result<()> {
    let solvers: Vec<Box<dyn Solver>> = vec![
        Box::new(ConstructionSolver),
        Box::new(SaSolver {
            config: SaConfig::new(SearchBudget::iterations(20_000, 1)),
        }),
        Box::new(GaSolver {
            config: GaConfig::new(SearchBudget::iterations(300, 1)),
        }),
    ];
    for seed in 0..5 {
        let inst = generate_instance(&GenConfig::new(7, 3, seed))?;
        let best = exact_small(&inst)?;
        print!("{}  exact {:.4}", inst.id, best.objective);
        for s in &solvers {
            let sol = s.solve(&inst)?;
            print!("  {} {:+.2}%", s.name(), 100.0 * gap(sol.objective, best.objective).unwrap_or(f64::NAN));
        }
        println!();
        println!("    optimal routes {:?}", best.routes);
    }
    Ok(())
}
