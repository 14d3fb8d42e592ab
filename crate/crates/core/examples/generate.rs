//! Writes a seeded instance set with a manifest, then reads it back.
//!
//! `cargo run --release --example generate -- [out_dir]`

use std::path::PathBuf;

use echo_vrp::harness::{cmd_generate, load_instances, GenerateArgs};
use echo_vrp::problem::Distribution;

fn main() -> echo_vrp::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("echo-vrp-instances"), PathBuf::from);
    let manifest = cmd_generate(&GenerateArgs {
        m: 3,
        n: 20,
        count: 5,
        distribution: Distribution::Clustered,
        cluster_sigma: 0.05,
        seed: 7,
        out: out.clone(),
    })?;
    println!("{} instances in {}", manifest.count, out.display());
    for inst in load_instances(&out)? {
        let demand: u64 = inst.customers.iter().map(|c| c.demand as u64).sum();
        let capacity: u64 = inst.vehicles.iter().map(|v| v.capacity as u64).sum();
        println!("{}  demand {demand}  fleet capacity {capacity}", inst.id);
    }
    Ok(())
}
