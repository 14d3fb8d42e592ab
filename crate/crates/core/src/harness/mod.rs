//! Command implementations behind the `echo-vrp` binary: instance generation,
//! training, solving, evaluation, benchmarking and the self test. Every file
//! written here records the settings that produced it.

pub mod checks;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{
    exact_small, ConstructionSolver, ExactSolver, GaConfig, GaSolver, SaConfig, SaSolver, SearchBudget,
    EXACT_MAX_CUSTOMERS, EXACT_MAX_VEHICLES,
};
use crate::error::{Error, Result};
use crate::inference::{
    evaluate_benchmark, solve_all, DecodeStrategy, EvalReport, Model, NeuralSolver, RunOptions, Solver,
    StoredSolutions, DEFAULT_SAMPLES, DEFAULT_SHARD,
};
use crate::mdp::{evaluate_solution, read_solution, write_solution, Solution};
use crate::model::{load_checkpoint, EdgeFeatures, ModelConfig};
use crate::problem::{generate_instance, read_instance, write_instance, Distribution, GenConfig, Instance};
use crate::seeds;
use crate::training::{train, TrainConfig, TrainOptions, TrainOutcome};

use checks::CheckOutcome;

const MANIFEST: &str = "manifest.json";
const STREAM_GENERATE: u64 = 0x6E4;
const STREAM_BENCH: u64 = 0xBE4;

/// Process exit status for an error: 2 configuration, 3 validation,
/// 4 files and checkpoints, 5 numerics.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        Error::Instance(_) | Error::Validation(_) | Error::Contract(_) | Error::Shape(_) => 3,
        Error::Format { .. } | Error::Integrity { .. } | Error::Io { .. } => 4,
        Error::Numeric(_) => 5,
    }
}

fn to_json<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("plain data serializes")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateArgs {
    pub m: usize,
    pub n: usize,
    pub count: usize,
    pub distribution: Distribution,
    pub cluster_sigma: f64,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub base_seed: u64,
    pub count: usize,
    /// Generator settings shared by every entry (its `seed` is the first one).
    pub generator: GenConfig,
    pub instances: Vec<ManifestEntry>,
}

/// Seed of the `index`-th generated instance.
pub fn generated_seed(base: u64, index: usize) -> u64 {
    seeds::derive_seed(base, STREAM_GENERATE, index as u64)
}

fn gen_config(m: usize, n: usize, distribution: Distribution, sigma: f64, seed: u64) -> GenConfig {
    let mut g = GenConfig::new(n, m, seed);
    if distribution == Distribution::Clustered {
        g = g.clustered(sigma);
    }
    g
}

pub fn generate_set(m: usize, n: usize, count: usize, distribution: Distribution, sigma: f64, seed: u64) -> Result<Vec<Instance>> {
    (0..count)
        .map(|i| generate_instance(&gen_config(m, n, distribution, sigma, generated_seed(seed, i))))
        .collect()
}

/// Writes `count` instances and a manifest into `out`.
pub fn cmd_generate(args: &GenerateArgs) -> Result<Manifest> {
    if args.count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    create_dir(&args.out)?;
    let mut entries = Vec::with_capacity(args.count);
    let mut generator = None;
    for i in 0..args.count {
        let seed = generated_seed(args.seed, i);
        let cfg = gen_config(args.m, args.n, args.distribution, args.cluster_sigma, seed);
        let inst = generate_instance(&cfg)?;
        let file = format!("{}.json", inst.id);
        write_instance(&inst, args.out.join(&file))?;
        entries.push(ManifestEntry { id: inst.id, file, seed });
        generator.get_or_insert(cfg);
    }
    let manifest = Manifest {
        format_version: 1,
        base_seed: args.seed,
        count: args.count,
        generator: generator.expect("count > 0"),
        instances: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&args.out.join(MANIFEST), &text)?;
    Ok(manifest)
}

/// Reads a single instance file, or a directory: in manifest order when a
/// manifest exists (ids are audited against file contents), otherwise every
/// `*.json` instance file sorted by name.
pub fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    if path.is_file() {
        return Ok(vec![read_instance(path)?]);
    }
    if !path.is_dir() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
    }
    let manifest_path = path.join(MANIFEST);
    if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e))?;
        return manifest
            .instances
            .iter()
            .map(|entry| {
                let inst = read_instance(path.join(&entry.file))?;
                if inst.id != entry.id {
                    return Err(Error::format(
                        &manifest_path,
                        format!("entry {} holds instance {}", entry.id, inst.id),
                    ));
                }
                Ok(inst)
            })
            .collect();
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".sol.json") && name != MANIFEST
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no instance files in {}", path.display())));
    }
    files.iter().map(read_instance).collect()
}

/// Every `*.sol.json` in `dir`.
pub fn load_solutions(dir: &Path) -> Result<Vec<Solution>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".sol.json")))
        .collect();
    files.sort();
    files.iter().map(read_solution).collect()
}

// ------------------------------------------------------------------- train

/// Command-line overrides for training; `None` keeps the config-file value,
/// and absent that, the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub distribution: Option<Distribution>,
    pub embed_dim: Option<usize>,
    pub layers: Option<usize>,
    pub knn: Option<usize>,
    pub batch_size: Option<usize>,
    pub augment: Option<usize>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub eval_size: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub no_dual_modality: bool,
    pub no_pfca: bool,
    pub no_vehicle_augment: bool,
    pub init: Option<PathBuf>,
    pub out: PathBuf,
    pub no_timing: bool,
    pub verbose: bool,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the JSON config file (any subset of the training config),
/// then flags. Without an explicit edge setting the neighbour count is
/// `min(16, N)`.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut value = to_json(&TrainConfig::new(ModelConfig::default(), 3, 10));
    value["model"].as_object_mut().expect("object").remove("edge_features");
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if !file.is_object() {
            return Err(Error::format(path, "expected a JSON object"));
        }
        merge(&mut value, file);
    }
    let set = |value: &mut Value, path: &[&str], v: Value| {
        let mut slot = value;
        for key in &path[..path.len() - 1] {
            slot = &mut slot[*key];
        }
        slot[path[path.len() - 1]] = v;
    };
    let flags: [(&[&str], Option<Value>); 14] = [
        (&["n_vehicles"], args.m.map(|v| json!(v))),
        (&["n_customers"], args.n.map(|v| json!(v))),
        (&["distribution"], args.distribution.map(|v| to_json(&v))),
        (&["model", "embed_dim"], args.embed_dim.map(|v| json!(v))),
        (&["model", "encoder_layers"], args.layers.map(|v| json!(v))),
        (&["model", "edge_features"], args.knn.map(|k| to_json(&EdgeFeatures::KnnSorted { k }))),
        (&["batch_size"], args.batch_size.map(|v| json!(v))),
        (&["augment"], args.augment.map(|v| json!(v))),
        (&["steps"], args.steps.map(|v| json!(v))),
        (&["optimizer", "lr"], args.lr.map(|v| json!(v))),
        (&["seed"], args.seed.map(|v| json!(v))),
        (&["eval_every"], args.eval_every.map(|v| json!(v))),
        (&["eval_size"], args.eval_size.map(|v| json!(v))),
        (&["checkpoint_every"], args.checkpoint_every.map(|v| json!(v))),
    ];
    for (path, v) in flags {
        if let Some(v) = v {
            set(&mut value, path, v);
        }
    }
    if args.no_dual_modality {
        set(&mut value, &["model", "dual_modality"], json!(false));
    }
    if args.no_pfca {
        set(&mut value, &["model", "pfca"], json!(false));
    }
    if args.no_vehicle_augment {
        set(&mut value, &["vehicle_augment"], json!(false));
    }
    if value["model"].get("edge_features").is_none_or(Value::is_null) {
        let n = value["n_customers"].as_u64().unwrap_or(10) as usize;
        set(&mut value, &["model", "edge_features"], to_json(&EdgeFeatures::KnnSorted { k: n.min(16) }));
    }
    let config: TrainConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("training config: {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let config = resolve_train_config(args)?;
    let init = match &args.init {
        Some(path) => {
            let (params, cfg) = load_checkpoint::<f32>(path)?;
            if cfg != config.model {
                return Err(Error::Shape(format!("{} was trained with another model configuration", path.display())));
            }
            Some(params)
        }
        None => None,
    };
    train(
        &config,
        init,
        Some(&args.out),
        TrainOptions {
            no_timing: args.no_timing,
            verbose: args.verbose,
        },
    )
}

// ----------------------------------------------------------------- solvers

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Model,
    Exact,
    Sa,
    Ga,
    Construction,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "model" => SolverKind::Model,
            "exact" => SolverKind::Exact,
            "sa" => SolverKind::Sa,
            "ga" => SolverKind::Ga,
            "construction" => SolverKind::Construction,
            other => return Err(Error::Config(format!("unknown solver `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" | "sampling" => Ok(DecodeMode::Sample),
            other => Err(Error::Config(format!("unknown decode mode `{other}`"))),
        }
    }
}

/// A fully specified solver. `k` is only meaningful with sampling and
/// `iterations` only with SA (iterations) and GA (generations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub checkpoint: Option<PathBuf>,
    pub decode: DecodeMode,
    pub k: Option<usize>,
    pub seed: u64,
    pub iterations: Option<u64>,
    pub shard: usize,
}

impl SolverSpec {
    pub fn new(kind: SolverKind) -> Self {
        SolverSpec {
            kind,
            checkpoint: None,
            decode: DecodeMode::Greedy,
            k: None,
            seed: 0,
            iterations: None,
            shard: DEFAULT_SHARD,
        }
    }

    pub fn model(checkpoint: impl Into<PathBuf>, decode: DecodeMode, k: Option<usize>, seed: u64) -> Self {
        SolverSpec {
            checkpoint: Some(checkpoint.into()),
            decode,
            k,
            seed,
            ..SolverSpec::new(SolverKind::Model)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_some() && !(self.kind == SolverKind::Model && self.decode == DecodeMode::Sample) {
            return Err(Error::Config("--k only applies to the model with sampling decoding".into()));
        }
        if self.k == Some(0) {
            return Err(Error::Config("--k must be positive".into()));
        }
        if self.kind == SolverKind::Model && self.checkpoint.is_none() {
            return Err(Error::Config("the model solver needs --checkpoint".into()));
        }
        if self.kind != SolverKind::Model && self.decode == DecodeMode::Sample {
            return Err(Error::Config("--decode only applies to the model solver".into()));
        }
        if self.iterations.is_some() && !matches!(self.kind, SolverKind::Sa | SolverKind::Ga) {
            return Err(Error::Config("--iterations only applies to sa and ga".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Solver>> {
        self.validate()?;
        Ok(match self.kind {
            SolverKind::Model => {
                let path = self.checkpoint.as_ref().expect("validated");
                let model = Model::load(path)?;
                let strategy = match self.decode {
                    DecodeMode::Greedy => DecodeStrategy::Greedy,
                    DecodeMode::Sample => DecodeStrategy::Sample {
                        k: self.k.unwrap_or(DEFAULT_SAMPLES),
                        seed: self.seed,
                    },
                };
                Box::new(NeuralSolver {
                    model,
                    strategy,
                    shard: self.shard,
                })
            }
            SolverKind::Exact => Box::new(ExactSolver),
            SolverKind::Construction => Box::new(ConstructionSolver),
            SolverKind::Sa => Box::new(SaSolver {
                config: SaConfig::new(SearchBudget::iterations(self.iterations.unwrap_or(50_000), self.seed)),
            }),
            SolverKind::Ga => Box::new(GaSolver {
                config: GaConfig::new(SearchBudget::iterations(self.iterations.unwrap_or(1_000), self.seed)),
            }),
        })
    }
}

/// Reference used when none is given: exact search where it applies,
/// otherwise SA with 50k iterations.
pub fn default_reference(m: usize, n: usize) -> SolverSpec {
    if n <= EXACT_MAX_CUSTOMERS && m <= EXACT_MAX_VEHICLES {
        SolverSpec::new(SolverKind::Exact)
    } else {
        SolverSpec {
            iterations: Some(50_000),
            ..SolverSpec::new(SolverKind::Sa)
        }
    }
}

// ------------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq)]
pub struct SolveArgs {
    pub instances: PathBuf,
    pub solver: SolverSpec,
    pub out: PathBuf,
    pub workers: usize,
    pub no_timing: bool,
}

/// Solves every instance, writes `<id>.sol.json` files and `solve.tsv`.
pub fn cmd_solve(args: &SolveArgs) -> Result<Vec<(Solution, f64)>> {
    let solver = args.solver.build()?;
    let instances = load_instances(&args.instances)?;
    let solved = solve_all(
        solver.as_ref(),
        &instances,
        RunOptions {
            workers: args.workers,
            no_timing: args.no_timing,
        },
    )?;
    create_dir(&args.out)?;
    let provenance = json!({ "solver": solver.name(), "spec": to_json(&args.solver) });
    let mut table = format!("# solver\t{}\n# config\t{}\ninstance_id\tobj\tseconds\n", solver.name(), provenance);
    for (inst, (sol, secs)) in instances.iter().zip(&solved) {
        // Stored objectives are always the re-evaluated ones.
        let obj = evaluate_solution(inst, &sol.routes)?;
        if obj.to_bits() != sol.objective.to_bits() {
            return Err(Error::Contract(format!("stale objective for {}", inst.id)));
        }
        write_solution(sol, Some(&provenance), args.out.join(format!("{}.sol.json", inst.id)))?;
        let _ = writeln!(table, "{}\t{:.9}\t{:.6}", inst.id, sol.objective, secs);
    }
    write_text(&args.out.join("solve.tsv"), &table)?;
    Ok(solved)
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub instances: PathBuf,
    pub references: PathBuf,
    pub reference_name: String,
    /// Stored solutions to evaluate instead of running `solver`.
    pub solutions: Option<PathBuf>,
    pub solver: SolverSpec,
    pub out: PathBuf,
    pub workers: usize,
    pub no_timing: bool,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let instances = load_instances(&args.instances)?;
    let references = load_solutions(&args.references)?;
    let (solver, provenance): (Box<dyn Solver>, Value) = match &args.solutions {
        Some(dir) => (
            Box::new(StoredSolutions::new(format!("stored:{}", dir.display()), load_solutions(dir)?)),
            json!({ "solutions": dir }),
        ),
        None => (args.solver.build()?, to_json(&args.solver)),
    };
    let report = evaluate_benchmark(
        solver.as_ref(),
        &instances,
        &references,
        &args.reference_name,
        RunOptions {
            workers: args.workers,
            no_timing: args.no_timing,
        },
    )?;
    report.write(&args.out, &provenance.to_string())?;
    Ok(report)
}

// ------------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq)]
pub struct BenchArgs {
    pub scales: Vec<(usize, usize)>,
    pub count: usize,
    pub distribution: Distribution,
    pub seed: u64,
    /// Rows of every table, in this order.
    pub solvers: Vec<SolverSpec>,
    /// `None` picks [`default_reference`] per scale.
    pub reference: Option<SolverSpec>,
    pub out: PathBuf,
    pub workers: usize,
    pub no_timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub m: usize,
    pub n: usize,
    pub reference: String,
    pub reports: Vec<EvalReport>,
}

impl BenchTable {
    pub fn to_tsv(&self, provenance: &str) -> String {
        let mut out = format!("# M\t{}\n# N\t{}\n# reference\t{}\n# config\t{provenance}\n", self.m, self.n, self.reference);
        out.push_str("solver\tmean_obj\tmean_gap\ttotal_seconds\tmean_seconds\n");
        for r in &self.reports {
            let gap = r.mean_gap().map_or_else(|| "nan".into(), |g| format!("{g:.9}"));
            let _ = writeln!(
                out,
                "{}\t{:.9}\t{gap}\t{:.6}\t{:.6}",
                r.solver,
                r.mean_objective(),
                r.total_seconds(),
                r.mean_seconds()
            );
        }
        out
    }
}

/// Instances of one benchmark scale; seeds depend on the scale so tables can
/// be regenerated independently.
pub fn bench_instances(m: usize, n: usize, count: usize, distribution: Distribution, seed: u64) -> Result<Vec<Instance>> {
    let scale_seed = seeds::derive_seed(seed, STREAM_BENCH, ((m as u64) << 32) | n as u64);
    generate_set(m, n, count, distribution, 0.05, scale_seed)
}

/// One table per `(M, N)` in `bench_m{M}_n{N}.tsv`, plus the per-solver
/// reports and the reference solutions it was measured against.
pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchTable>> {
    if args.scales.is_empty() || args.solvers.is_empty() || args.count == 0 {
        return Err(Error::Config("bench needs at least one scale, one solver and one instance".into()));
    }
    let solvers: Vec<Box<dyn Solver>> = args.solvers.iter().map(SolverSpec::build).collect::<Result<_>>()?;
    let options = RunOptions {
        workers: args.workers,
        no_timing: args.no_timing,
    };
    create_dir(&args.out)?;
    let mut tables = Vec::new();
    for &(m, n) in &args.scales {
        let instances = bench_instances(m, n, args.count, args.distribution, args.seed)?;
        let reference_spec = args.reference.clone().unwrap_or_else(|| default_reference(m, n));
        let reference = reference_spec.build()?;
        let refs: Vec<Solution> = solve_all(reference.as_ref(), &instances, options)?
            .into_iter()
            .map(|(s, _)| s)
            .collect();
        let ref_dir = args.out.join(format!("reference_m{m}_n{n}"));
        create_dir(&ref_dir)?;
        let ref_provenance = json!({ "solver": reference.name(), "spec": to_json(&reference_spec) });
        for s in &refs {
            write_solution(s, Some(&ref_provenance), ref_dir.join(format!("{}.sol.json", s.instance_id)))?;
        }
        let mut reports = Vec::with_capacity(solvers.len());
        for (solver, spec) in solvers.iter().zip(&args.solvers) {
            let report = evaluate_benchmark(solver.as_ref(), &instances, &refs, &reference.name(), options)?;
            report.write(
                args.out.join(format!("report_m{m}_n{n}_{}.tsv", report.solver)),
                &to_json(spec).to_string(),
            )?;
            reports.push(report);
        }
        let table = BenchTable {
            m,
            n,
            reference: reference.name(),
            reports,
        };
        let provenance = json!({
            "count": args.count,
            "distribution": args.distribution,
            "seed": args.seed,
            "solvers": to_json(&args.solvers),
        });
        write_text(&args.out.join(format!("bench_m{m}_n{n}.tsv")), &table.to_tsv(&provenance.to_string()))?;
        tables.push(table);
    }
    Ok(tables)
}

// ---------------------------------------------------------------- selftest

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestArgs {
    /// Optional checkpoint that must load and decode.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    /// Scratch directory for round-trip files; a temporary one by default.
    pub scratch: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<(CheckOutcome, f64)>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(c, _)| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|(c, _)| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (c, secs) in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{status}  {:width$}  {secs:7.2}s  {}", c.name, c.detail);
        }
        let failed = self.checks.iter().filter(|(c, _)| !c.passed).count();
        let _ = writeln!(out, "{} checks, {failed} failed", self.checks.len());
        out
    }
}

fn exact_examples() -> Result<CheckOutcome> {
    let line = |points: &[(f64, f64)], vehicles: usize| {
        Instance::new(
            "example",
            Distribution::Uniform,
            [0.0, 0.0],
            points
                .iter()
                .map(|&(x, y)| crate::problem::Customer { x, y, demand: 1 })
                .collect(),
            vec![crate::problem::Vehicle { capacity: 10, speed: 1.0 }; vehicles],
        )
    };
    let a = exact_small(&line(&[(0.5, 0.0), (1.0, 0.0)], 1)?)?.objective;
    let b = exact_small(&line(&[(0.0, 0.5), (0.5, 0.0)], 2)?)?.objective;
    let passed = (a - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12;
    Ok(CheckOutcome {
        name: "exact search examples".into(),
        passed,
        detail: format!("chain {a:.12}, split {b:.12}"),
    })
}

/// Fast invariant suite; each check is timed and errors count as failures.
pub fn cmd_selftest(args: &SelftestArgs) -> Result<SelftestReport> {
    let scratch = match &args.scratch {
        Some(dir) => dir.clone(),
        None => std::env::temp_dir().join(format!("echo-vrp-selftest-{}", std::process::id())),
    };
    let seed = args.seed;
    type Check<'a> = (&'a str, Box<dyn Fn() -> CheckOutcome + 'a>);
    let mut list: Vec<Check> = vec![
        ("mask soundness under sampling", Box::new(|| checks::feasibility_outcome(1_000, seed))),
        ("PFCA contract", Box::new(|| CheckOutcome::from_result("PFCA contract", checks::pfca_contract(seed)))),
        ("augmentation symmetry", Box::new(|| checks::symmetry_outcome(100, seed))),
        ("equivariance", Box::new(|| checks::equivariance_outcome(20, seed))),
        ("ablation switches", Box::new(|| CheckOutcome::from_result("ablation switches", checks::ablations(seed)))),
        ("gradient check", Box::new(|| checks::gradient_outcome(100, seed))),
        (
            "file round trips",
            Box::new(|| CheckOutcome::from_result("file round trips", checks::round_trips(&scratch, seed))),
        ),
        ("exact search examples", Box::new(|| CheckOutcome::from_result("exact search examples", exact_examples()))),
    ];
    if let Some(path) = &args.checkpoint {
        list.push((
            "checkpoint fixture",
            Box::new(move || CheckOutcome::from_result("checkpoint fixture", checks::checkpoint_file(path, seed))),
        ));
    }
    let mut report = SelftestReport { checks: Vec::new() };
    for (_, run) in &list {
        let started = Instant::now();
        let outcome = run();
        report.checks.push((outcome, started.elapsed().as_secs_f64()));
    }
    if args.scratch.is_none() {
        let _ = fs::remove_dir_all(&scratch);
    }
    Ok(report)
}

