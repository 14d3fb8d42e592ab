//! Full-size acceptance run. Each criterion prints one PASS/FAIL line straight
//! to stderr (so it shows without `--nocapture`), and the test fails if any
//! criterion does.

use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use echo_vrp::baselines::{exact_small, ConstructionSolver, GaConfig, GaSolver, SaConfig, SaSolver, SearchBudget};
use echo_vrp::harness::checks::{self, CheckOutcome};
use echo_vrp::harness::*;
use echo_vrp::inference::{solve_all, solve_greedy, solve_sampling, Model, NeuralSolver, RunOptions, Solver};
use echo_vrp::mdp::Solution;
use echo_vrp::model::{load_checkpoint, save_checkpoint, EdgeFeatures, ModelConfig};
use echo_vrp::problem::Distribution;
use echo_vrp::training::{train, TrainConfig, TrainOptions};
use tempfile::TempDir;

const SEED: u64 = 2024;

fn report(outcome: &CheckOutcome, seconds: f64) {
    let status = if outcome.passed { "PASS" } else { "FAIL" };
    let line = format!("ACCEPTANCE {status}  {:<34} {seconds:8.1}s  {}\n", outcome.name, outcome.detail);
    // Written to the raw handle so the line survives output capture.
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn timed(run: impl FnOnce() -> CheckOutcome) -> (CheckOutcome, f64) {
    let started = Instant::now();
    let outcome = run();
    (outcome, started.elapsed().as_secs_f64())
}

struct Toy {
    config: TrainConfig,
    initial: Model,
    trained: Model,
    seconds: f64,
}

/// The toy policy, trained once and shared by the learning and oracle-gap
/// criteria.
fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let mut config = TrainConfig::new(ModelConfig::with_dims(64, 2, EdgeFeatures::KnnSorted { k: 5 }), 3, 10);
        config.steps = 500;
        config.batch_size = 128;
        config.augment = 8;
        config.seed = SEED;
        config.eval_every = 0;
        let options = TrainOptions {
            no_timing: true,
            verbose: false,
        };
        let initial = train(&TrainConfig { steps: 0, ..config.clone() }, None, None, options).unwrap().params;
        let started = Instant::now();
        let trained = train(&config, None, None, options).unwrap().params;
        Toy {
            initial: Model::new(config.model.clone(), initial),
            trained: Model::new(config.model.clone(), trained),
            config,
            seconds: started.elapsed().as_secs_f64(),
        }
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn gradient() -> (CheckOutcome, f64) {
    let (mut outcome, secs) = timed(|| checks::gradient_outcome(200, SEED));
    outcome.passed &= secs < 300.0;
    outcome.name = "gradient correctness".into();
    (outcome, secs)
}

fn feasibility() -> (CheckOutcome, f64) {
    let (mut o, s) = timed(|| checks::feasibility_outcome(10_000, SEED));
    o.name = "feasibility under sampling".into();
    (o, s)
}

fn symmetry() -> (CheckOutcome, f64) {
    let (mut o, s) = timed(|| checks::symmetry_outcome(1_000, SEED));
    o.name = "symmetry suite".into();
    (o, s)
}

fn equivariance() -> (CheckOutcome, f64) {
    let (mut o, s) = timed(|| checks::equivariance_outcome(100, SEED));
    o.name = "equivariance".into();
    (o, s)
}

fn pfca() -> (CheckOutcome, f64) {
    timed(|| CheckOutcome::from_result("PFCA contract", checks::pfca_contract(SEED)))
}

fn learning() -> (CheckOutcome, f64) {
    let name = "learning smoke";
    let toy = toy();
    timed(|| {
        let held_out = generate_set(3, 10, 256, Distribution::Uniform, 0.05, SEED ^ 0x5EED).unwrap();
        let before = mean(held_out.iter().map(|i| solve_greedy(&toy.initial, i).unwrap().objective));
        let greedy: Vec<f64> = held_out.iter().map(|i| solve_greedy(&toy.trained, i).unwrap().objective).collect();
        let after = mean(greedy.iter().copied());
        let improvement = 1.0 - after / before;
        let wins = held_out
            .iter()
            .zip(&greedy)
            .enumerate()
            .filter(|(k, (inst, g))| {
                let untrained = solve_sampling(&toy.initial, inst, 16, SEED + *k as u64, 16).unwrap();
                **g < untrained.best.objective
            })
            .count();
        let win_rate = wins as f64 / held_out.len() as f64;
        CheckOutcome {
            name: name.into(),
            passed: improvement >= 0.10 && win_rate >= 0.80 && toy.seconds <= 3600.0,
            detail: format!(
                "held-out greedy {before:.4} -> {after:.4} ({:.1}% better), beats untrained sampling(16) on {wins}/256, {} steps in {:.0}s",
                100.0 * improvement,
                toy.config.steps,
                toy.seconds
            ),
        }
    })
}

fn oracle_gaps() -> (CheckOutcome, f64) {
    let name = "oracle gaps at tiny scale";
    let toy = toy();
    timed(|| {
        let insts = generate_set(2, 6, 100, Distribution::Uniform, 0.05, SEED ^ 0x0AC1E).unwrap();
        let exact: Vec<Solution> = insts.iter().map(|i| exact_small(i).unwrap()).collect();
        let solvers: Vec<Box<dyn Solver>> = vec![
            Box::new(SaSolver {
                config: SaConfig::new(SearchBudget::iterations(50_000, SEED)),
            }),
            Box::new(GaSolver {
                config: GaConfig::new(SearchBudget::iterations(1_000, SEED)),
            }),
            Box::new(ConstructionSolver),
            Box::new(NeuralSolver::greedy(toy.trained.clone())),
            Box::new(NeuralSolver::sampling(toy.trained.clone(), 1280, SEED)),
        ];
        let mut beaten = 0;
        let mut gaps = Vec::new();
        for solver in &solvers {
            let solved = solve_all(solver.as_ref(), &insts, RunOptions { workers: 1, no_timing: true }).unwrap();
            let mut g = Vec::new();
            for ((s, _), e) in solved.iter().zip(&exact) {
                if s.objective < e.objective {
                    beaten += 1;
                }
                g.push(s.objective / e.objective - 1.0);
            }
            gaps.push((solver.name(), mean(g.into_iter())));
        }
        let gap = |prefix: &str| gaps.iter().find(|(n, _)| n.starts_with(prefix)).map(|(_, g)| *g).unwrap();
        let (sa, greedy, sampling) = (gap("sa-"), gap("greedy"), gap("sampling"));
        let listing: Vec<String> = gaps.iter().map(|(n, g)| format!("{n} {:.2}%", 100.0 * g)).collect();
        CheckOutcome {
            name: name.into(),
            passed: beaten == 0 && sa <= 0.02 && sampling <= greedy,
            detail: format!("exact beaten {beaten} times; mean gaps {}", listing.join(", ")),
        }
    })
}

fn ablation() -> (CheckOutcome, f64) {
    let (mut o, s) = timed(|| CheckOutcome::from_result("ablation plumbing", checks::ablations(SEED)));
    o.name = "ablation plumbing".into();
    (o, s)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs every command twice (one worker, then three) into sibling
/// directories and compares the trees byte for byte.
fn determinism() -> (CheckOutcome, f64) {
    let name = "determinism and persistence";
    timed(|| {
        let result = (|| -> echo_vrp::Result<String> {
            let t = TempDir::new().expect("temporary directory");
            let mut problems = Vec::new();
            let ckpt = t.path().join("toy.ckpt");
            let toy = toy();
            save_checkpoint(&toy.trained.params, &toy.trained.config, &ckpt)?;
            let (params, cfg) = load_checkpoint::<f32>(&ckpt)?;
            if params != toy.trained.params || cfg != toy.trained.config {
                problems.push("checkpoint round trip".to_string());
            }
            let rt = checks::round_trips(&t.path().join("rt"), SEED)?;
            if !rt.passed {
                problems.push(rt.detail);
            }
            for (run, workers) in [("a", 1), ("b", 3)] {
                let root = t.path().join(run);
                cmd_generate(&GenerateArgs {
                    m: 3,
                    n: 8,
                    count: 6,
                    distribution: Distribution::Clustered,
                    cluster_sigma: 0.05,
                    seed: SEED,
                    out: root.join("gen"),
                })?;
                let solve = |solver: SolverSpec, out: &str| {
                    cmd_solve(&SolveArgs {
                        instances: root.join("gen"),
                        solver,
                        out: root.join(out),
                        workers,
                        no_timing: true,
                    })
                };
                solve(SolverSpec::new(SolverKind::Exact), "exact")?;
                solve(SolverSpec::model(&ckpt, DecodeMode::Sample, Some(64), SEED), "sample")?;
                solve(SolverSpec::model(&ckpt, DecodeMode::Greedy, None, SEED), "greedy")?;
                cmd_eval(&EvalArgs {
                    instances: root.join("gen"),
                    references: root.join("exact"),
                    reference_name: "exact".into(),
                    solutions: None,
                    solver: SolverSpec::model(&ckpt, DecodeMode::Sample, Some(64), SEED),
                    out: root.join("eval.tsv"),
                    workers,
                    no_timing: true,
                })?;
                let mut sa = SolverSpec::new(SolverKind::Sa);
                sa.iterations = Some(2_000);
                cmd_bench(&BenchArgs {
                    scales: vec![(2, 6), (3, 7)],
                    count: 4,
                    distribution: Distribution::Uniform,
                    seed: SEED,
                    solvers: vec![SolverSpec::new(SolverKind::Construction), sa, SolverSpec::model(&ckpt, DecodeMode::Greedy, None, 0)],
                    reference: None,
                    out: root.join("bench"),
                    workers,
                    no_timing: true,
                })?;
                cmd_train(&TrainArgs {
                    m: Some(2),
                    n: Some(6),
                    embed_dim: Some(16),
                    layers: Some(1),
                    knn: Some(4),
                    batch_size: Some(8),
                    augment: Some(4),
                    steps: Some(3),
                    eval_every: Some(3),
                    eval_size: Some(8),
                    seed: Some(SEED),
                    out: root.join("train"),
                    no_timing: true,
                    ..Default::default()
                })?;
            }
            let (a, b) = (dir_bytes(&t.path().join("a")), dir_bytes(&t.path().join("b")));
            if a != b {
                problems.push("output trees differ between 1 and 3 workers".into());
            }
            if problems.is_empty() {
                Ok(format!(
                    "{} files identical across reruns with 1 and 3 workers; checkpoint, instance and solution round trips exact",
                    a.len()
                ))
            } else {
                Err(echo_vrp::Error::Contract(problems.join("; ")))
            }
        })();
        match result {
            Ok(detail) => CheckOutcome {
                name: name.into(),
                passed: true,
                detail,
            },
            Err(e) => CheckOutcome {
                name: name.into(),
                passed: false,
                detail: e.to_string(),
            },
        }
    })
}

#[test]
fn acceptance() {
    let criteria: [fn() -> (CheckOutcome, f64); 9] = [
        gradient,
        feasibility,
        symmetry,
        equivariance,
        pfca,
        learning,
        oracle_gaps,
        ablation,
        determinism,
    ];
    let mut failed = Vec::new();
    for criterion in criteria {
        let (outcome, seconds) = criterion();
        report(&outcome, seconds);
        if !outcome.passed {
            failed.push(outcome.name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

