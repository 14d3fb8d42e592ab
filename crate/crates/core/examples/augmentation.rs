//! The eight coordinate transforms with fleet relabelling, and the objective
//! of one fixed solution on every variant.
//!
//! `cargo run --release --example augmentation`

use echo_vrp::baselines::greedy_construction;
use echo_vrp::mdp::evaluate_solution;
use echo_vrp::problem::{generate_instance, GenConfig};
use echo_vrp::seeds::rng_for;
use echo_vrp::training::{augment_instance, permute_routes, TRANSFORM_COUNT};

fn main() -> echo_vrp::Result<()> {
    let inst = generate_instance(&GenConfig::new(8, 3, 5))?;
    let sol = greedy_construction(&inst)?;
    let mut rng = rng_for(5, 0, 0);
    for v in augment_instance(&inst, 0, TRANSFORM_COUNT, true, &mut rng)? {
        let routes = permute_routes(&sol.routes, &v.permutation);
        let obj = evaluate_solution(&v.instance, &routes)?;
        let c = &v.instance.customers[0];
        println!(
            "transform {}  fleet {:?}  first customer ({:.3}, {:.3})  objective {:.12} ({:+.1e})",
            v.transform,
            v.permutation,
            c.x,
            c.y,
            obj,
            obj - sol.objective
        );
    }
    Ok(())
}
