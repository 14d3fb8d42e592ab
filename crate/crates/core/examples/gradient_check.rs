//! Finite-difference check of the policy-gradient loss in 64-bit mode.
//!
//! `cargo run --release --example gradient_check -- [probes]`

use echo_vrp::harness::checks::surrogate_gradient;

fn main() -> echo_vrp::Result<()> {
    let probes = std::env::args().nth(1).map_or(200, |s| s.parse().expect("probes must be an integer"));
    let report = surrogate_gradient(8, 2, 2, 5, probes, 0)?;
    println!("{} probes, max relative error {:.3e}", report.probes, report.max_relative_error);
    if let Some((tensor, element, analytic, numeric)) = report.worst {
        println!("worst: tensor {tensor} element {element}, analytic {analytic:.6e} vs numeric {numeric:.6e}");
    }
    Ok(())
}
