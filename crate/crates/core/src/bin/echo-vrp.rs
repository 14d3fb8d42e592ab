use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use echo_vrp::harness::{
    self, BenchArgs, DecodeMode, EvalArgs, GenerateArgs, SelftestArgs, SolveArgs, SolverKind, SolverSpec, TrainArgs,
};
use echo_vrp::inference::DEFAULT_SHARD;
use echo_vrp::problem::Distribution;
use echo_vrp::{Error, Result};

#[derive(Parser)]
#[command(name = "echo-vrp", version, about = "Neural and classical solvers for the min-max heterogeneous CVRP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded instances and a manifest.
    Generate {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value = "uniform")]
        dist: Distribution,
        #[arg(long, default_value_t = 0.05)]
        cluster_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy; flags override the config file, which overrides defaults.
    Train(TrainCli),
    /// Solve instances and write solution files.
    Solve {
        #[arg(long)]
        instances: PathBuf,
        #[command(flatten)]
        solver: SolverCli,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        no_timing: bool,
    },
    /// Compare a solver (or stored solutions) with reference solutions.
    Eval {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long, default_value = "reference")]
        reference_name: String,
        #[arg(long)]
        solutions: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverCli,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        no_timing: bool,
    },
    /// Sweep solvers over scales; one table per (M, N).
    Bench {
        /// Scales as `MxN`, e.g. `2x6,3x10`.
        #[arg(long, value_delimiter = ',', default_value = "2x6")]
        scales: Vec<String>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "uniform")]
        dist: Distribution,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rows in order: exact, sa, ga, construction, greedy, sampling.
        #[arg(long, value_delimiter = ',', default_value = "exact,sa,construction")]
        solvers: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1280)]
        k: usize,
        /// Iterations for sa and generations for ga.
        #[arg(long)]
        iterations: Option<u64>,
        /// Reference solver; exact where it applies, otherwise sa.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        no_timing: bool,
    },
    /// Run the fast invariant suite.
    Selftest {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainCli {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dist: Option<Distribution>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    augment: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    no_dual_modality: bool,
    #[arg(long)]
    no_pfca: bool,
    #[arg(long)]
    no_vehicle_augment: bool,
    /// Continue from this checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct SolverCli {
    #[arg(long, default_value = "model")]
    solver: SolverKind,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "greedy")]
    decode: DecodeMode,
    /// Samples per instance (sampling only, default 1280).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iterations for sa and generations for ga.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_SHARD)]
    shard: usize,
}

impl SolverCli {
    fn spec(&self) -> SolverSpec {
        SolverSpec {
            kind: self.solver,
            checkpoint: self.checkpoint.clone(),
            decode: self.decode,
            k: self.k,
            seed: self.seed,
            iterations: self.iterations,
            shard: self.shard,
        }
    }
}

fn parse_scale(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("scale `{s}` is not of the form MxN"));
    let (m, n) = s.split_once('x').ok_or_else(bad)?;
    Ok((m.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}

fn bench_solver(name: &str, checkpoint: &Option<PathBuf>, k: usize, seed: u64, iterations: Option<u64>) -> Result<SolverSpec> {
    let model = |decode, k| match checkpoint {
        Some(path) => Ok(SolverSpec::model(path, decode, k, seed)),
        None => Err(Error::Config(format!("solver `{name}` needs --checkpoint"))),
    };
    match name {
        "greedy" => model(DecodeMode::Greedy, None),
        "sampling" | "sample" => model(DecodeMode::Sample, Some(k)),
        other => {
            let kind: SolverKind = other.parse()?;
            let mut spec = SolverSpec::new(kind);
            spec.seed = seed;
            if matches!(kind, SolverKind::Sa | SolverKind::Ga) {
                spec.iterations = iterations;
            }
            Ok(spec)
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate {
            m,
            n,
            count,
            dist,
            cluster_sigma,
            seed,
            out,
        } => {
            let manifest = harness::cmd_generate(&GenerateArgs {
                m,
                n,
                count,
                distribution: dist,
                cluster_sigma,
                seed,
                out: out.clone(),
            })?;
            println!("wrote {} instances to {}", manifest.count, out.display());
        }
        Command::Train(t) => {
            let args = TrainArgs {
                config: t.config,
                m: t.m,
                n: t.n,
                distribution: t.dist,
                embed_dim: t.embed_dim,
                layers: t.layers,
                knn: t.knn,
                batch_size: t.batch_size,
                augment: t.augment,
                steps: t.steps,
                lr: t.lr,
                seed: t.seed,
                eval_every: t.eval_every,
                eval_size: t.eval_size,
                checkpoint_every: t.checkpoint_every,
                no_dual_modality: t.no_dual_modality,
                no_pfca: t.no_pfca,
                no_vehicle_augment: t.no_vehicle_augment,
                init: t.init,
                out: t.out.clone(),
                no_timing: t.no_timing,
                verbose: t.verbose,
            };
            let outcome = harness::cmd_train(&args)?;
            if let (Some(first), Some(last)) = (outcome.evaluations.first(), outcome.evaluations.last()) {
                println!("held-out greedy mean objective {:.6} -> {:.6}", first.1, last.1);
            }
            println!("checkpoint {}", t.out.join("final.ckpt").display());
        }
        Command::Solve {
            instances,
            solver,
            out,
            workers,
            no_timing,
        } => {
            let solved = harness::cmd_solve(&SolveArgs {
                instances,
                solver: solver.spec(),
                out: out.clone(),
                workers,
                no_timing,
            })?;
            let mean = solved.iter().map(|(s, _)| s.objective).sum::<f64>() / solved.len() as f64;
            println!("solved {} instances, mean objective {mean:.6}, written to {}", solved.len(), out.display());
        }
        Command::Eval {
            instances,
            references,
            reference_name,
            solutions,
            solver,
            out,
            workers,
            no_timing,
        } => {
            let report = harness::cmd_eval(&EvalArgs {
                instances,
                references,
                reference_name,
                solutions,
                solver: solver.spec(),
                out: out.clone(),
                workers,
                no_timing,
            })?;
            let gap = report.mean_gap().map_or("nan".to_string(), |g| format!("{:.4}%", 100.0 * g));
            println!("{}: mean objective {:.6}, mean gap {gap}", report.solver, report.mean_objective());
        }
        Command::Bench {
            scales,
            count,
            dist,
            seed,
            solvers,
            checkpoint,
            k,
            iterations,
            reference,
            out,
            workers,
            no_timing,
        } => {
            let scales = scales.iter().map(|s| parse_scale(s)).collect::<Result<Vec<_>>>()?;
            let solvers = solvers
                .iter()
                .map(|s| bench_solver(s.trim(), &checkpoint, k, seed, iterations))
                .collect::<Result<Vec<_>>>()?;
            let reference = reference
                .map(|r| bench_solver(&r, &checkpoint, k, seed, iterations))
                .transpose()?;
            let tables = harness::cmd_bench(&BenchArgs {
                scales,
                count,
                distribution: dist,
                seed,
                solvers,
                reference,
                out,
                workers,
                no_timing,
            })?;
            for table in tables {
                print!("{}", table.to_tsv(""));
            }
        }
        Command::Selftest { checkpoint, seed } => {
            let report = harness::cmd_selftest(&SelftestArgs {
                checkpoint,
                seed,
                scratch: None,
            })?;
            print!("{}", report.table());
            if !report.passed() {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
