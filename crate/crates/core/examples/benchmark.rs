//! A small benchmark sweep written to TSV tables.
//!
//! `cargo run --release --example benchmark -- [out_dir]`

use std::path::PathBuf;

use echo_vrp::harness::{cmd_bench, BenchArgs, SolverKind, SolverSpec};
use echo_vrp::problem::Distribution;

fn main() -> echo_vrp::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("echo-vrp-bench"), PathBuf::from);
    let mut sa = SolverSpec::new(SolverKind::Sa);
    sa.iterations = Some(10_000);
    let mut ga = SolverSpec::new(SolverKind::Ga);
    ga.iterations = Some(200);
    let tables = cmd_bench(&BenchArgs {
        scales: vec![(2, 6), (3, 8), (3, 20)],
        count: 10,
        distribution: Distribution::Uniform,
        seed: 0,
        solvers: vec![SolverSpec::new(SolverKind::Construction), sa, ga],
        reference: None,
        out: out.clone(),
        workers: 1,
        no_timing: false,
    })?;
    for t in tables {
        print!("{}", t.to_tsv(""));
        println!();
    }
    println!("tables written to {}", out.display());
    Ok(())
}
