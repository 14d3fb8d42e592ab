//! Greedy and sampled decoding with a checkpoint (or a fresh model).
//!
//! `cargo run --release --example solve -- [checkpoint]`

use echo_vrp::inference::{solve_greedy, solve_sampling, Model};
use echo_vrp::model::{load_checkpoint, EdgeFeatures, ModelConfig, ParameterSet};
use echo_vrp::problem::{generate_instance, GenConfig};

fn main() -> echo_vrp::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => {
            let (params, cfg) = load_checkpoint::<f32>(path)?;
            Model::new(cfg, params)
        }
        None => {
            println!("no checkpoint given, using an untrained model");
            let cfg = ModelConfig::with_dims(64, 2, EdgeFeatures::KnnSorted { k: 5 });
            Model::new(cfg.clone(), ParameterSet::init(&cfg, 0)?)
        }
    };
    let inst = generate_instance(&GenConfig::new(10, 3, 11))?;
    let greedy = solve_greedy(&model, &inst)?;
    println!("greedy       {:.4}  {:?}", greedy.objective, greedy.routes);
    for k in [16, 128, 1280] {
        let s = solve_sampling(&model, &inst, k, 3, 256)?;
        println!("sampling {k:>4} {:.4}  {:?}", s.best.objective, s.best.routes);
    }
    Ok(())
}
