//! Trains the small M=3, N=10 policy and reports held-out greedy objectives.
//!
//! `cargo run --release --example train_toy -- [steps] [out_dir]`

use std::path::PathBuf;

use echo_vrp::model::{EdgeFeatures, ModelConfig};
use echo_vrp::training::{train, TrainConfig, TrainOptions};

fn main() -> echo_vrp::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(500, |s| s.parse().expect("steps must be an integer"));
    let out: Option<PathBuf> = args.next().map(PathBuf::from);

    let model = ModelConfig::with_dims(64, 2, EdgeFeatures::KnnSorted { k: 5 });
    let mut config = TrainConfig::new(model, 3, 10);
    config.steps = steps;
    if let Ok(lr) = std::env::var("LR") {
        config.optimizer.lr = lr.parse().expect("LR must be a number");
    }
    let options = TrainOptions { no_timing: false, verbose: true };
    let outcome = train(&config, None, out.as_deref(), options)?;
    for m in outcome.metrics.iter().step_by(10) {
        println!("step {:4}  mean obj {:.4}  grad norm {:.3}  {:.2}s", m.step, m.mean_objective, m.grad_norm, m.seconds);
    }
    if let (Some(first), Some(last)) = (outcome.evaluations.first(), outcome.evaluations.last()) {
        println!("held-out greedy: {:.4} -> {:.4} ({:+.1}%)", first.1, last.1, 100.0 * (last.1 / first.1 - 1.0));
    }
    Ok(())
}
