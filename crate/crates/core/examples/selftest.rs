//! The invariant suite, as run by `echo-vrp selftest`.
//!
//! `cargo run --release --example selftest -- [checkpoint]`

use echo_vrp::harness::{cmd_selftest, SelftestArgs};

fn main() -> echo_vrp::Result<()> {
    let report = cmd_selftest(&SelftestArgs {
        checkpoint: std::env::args().nth(1).map(Into::into),
        seed: 0,
        scratch: None,
    })?;
    print!("{}", report.table());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
