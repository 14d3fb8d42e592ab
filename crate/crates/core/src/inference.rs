//! Greedy and sampling decoders and batch evaluation against references.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result, ValidationError};
use crate::mdp::{evaluate_solution, Solution};
use crate::model::{ModelConfig, ParameterSet, Policy};
use crate::numerics::{NormMode, Tape};
use crate::problem::Instance;
use crate::seeds;
use crate::training::{rollout, Decode};

const STREAM_SAMPLING: u64 = 0x5A4D;
/// Default number of sampled rollouts per instance.
pub const DEFAULT_SAMPLES: usize = 1280;
/// Default number of rollouts decoded together.
pub const DEFAULT_SHARD: usize = 256;

/// A trained (or freshly initialized) policy ready for decoding.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet<f32>,
}

impl Model {
    pub fn new(config: ModelConfig, params: ParameterSet<f32>) -> Self {
        Model { config, params }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, config) = crate::model::load_checkpoint(path)?;
        Ok(Model { config, params })
    }
}

/// Argmax decoding with running batch-norm statistics.
pub fn solve_greedy(model: &Model, instance: &Instance) -> Result<Solution> {
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &model.config, &model.params, false, NormMode::Inference)?;
    let out = rollout(&mut tape, &policy, &[instance], &[0], &Decode::Greedy)?;
    checked(instance, out.trajectories.into_iter().next().expect("one rollout").solution)
}

/// Result of sampling decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub best: Solution,
    /// Objective of every sample, in sample order.
    pub objectives: Vec<f64>,
}

/// Seed of sample `index` for base seed `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seeds::derive_seed(seed, STREAM_SAMPLING, index as u64)
}

/// `k` independent categorical rollouts, decoded `shard` at a time. Returns
/// the best one; ties go to the earliest sample. Results do not depend on
/// `shard`.
pub fn solve_sampling(model: &Model, instance: &Instance, k: usize, seed: u64, shard: usize) -> Result<Sampled> {
    if k == 0 {
        return Err(Error::Config("sampling needs k >= 1".into()));
    }
    let shard = shard.max(1);
    let mut objectives = Vec::with_capacity(k);
    let mut best: Option<Solution> = None;
    let mut start = 0;
    while start < k {
        let end = (start + shard).min(k);
        let seeds: Vec<u64> = (start..end).map(|i| sample_seed(seed, i)).collect();
        let mut tape = Tape::new();
        let policy = Policy::bind(&mut tape, &model.config, &model.params, false, NormMode::Inference)?;
        let sources = vec![0; end - start];
        let out = rollout(&mut tape, &policy, &[instance], &sources, &Decode::Sample(seeds))?;
        for t in out.trajectories {
            objectives.push(t.solution.objective);
            if best.as_ref().is_none_or(|b| t.solution.objective < b.objective) {
                best = Some(t.solution);
            }
        }
        start = end;
    }
    Ok(Sampled {
        best: checked(instance, best.expect("k >= 1"))?,
        objectives,
    })
}

fn checked(instance: &Instance, solution: Solution) -> Result<Solution> {
    let obj = evaluate_solution(instance, &solution.routes)?;
    if obj.to_bits() != solution.objective.to_bits() {
        return Err(Error::Contract(format!(
            "decoded objective {} differs from re-evaluation {obj}",
            solution.objective
        )));
    }
    Ok(solution)
}

/// Anything that maps an instance to a feasible solution.
pub trait Solver: Sync {
    fn name(&self) -> String;
    fn solve(&self, instance: &Instance) -> Result<Solution>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStrategy {
    Greedy,
    Sample { k: usize, seed: u64 },
}

/// The policy as a [`Solver`].
#[derive(Debug, Clone)]
pub struct NeuralSolver {
    pub model: Model,
    pub strategy: DecodeStrategy,
    pub shard: usize,
}

impl NeuralSolver {
    pub fn greedy(model: Model) -> Self {
        NeuralSolver {
            model,
            strategy: DecodeStrategy::Greedy,
            shard: DEFAULT_SHARD,
        }
    }

    pub fn sampling(model: Model, k: usize, seed: u64) -> Self {
        NeuralSolver {
            model,
            strategy: DecodeStrategy::Sample { k, seed },
            shard: DEFAULT_SHARD,
        }
    }
}

impl Solver for NeuralSolver {
    fn name(&self) -> String {
        match self.strategy {
            DecodeStrategy::Greedy => "greedy".into(),
            DecodeStrategy::Sample { k, .. } => format!("sampling-k{k}"),
        }
    }

    fn solve(&self, instance: &Instance) -> Result<Solution> {
        match self.strategy {
            DecodeStrategy::Greedy => solve_greedy(&self.model, instance),
            DecodeStrategy::Sample { k, seed } => Ok(solve_sampling(&self.model, instance, k, seed, self.shard)?.best),
        }
    }
}

/// One evaluated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub instance_id: String,
    pub objective: f64,
    /// `(obj - ref) / ref`; absent when the reference objective is not positive.
    pub gap: Option<f64>,
    pub seconds: f64,
    pub solution: Solution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub solver: String,
    pub reference: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean_objective(&self) -> f64 {
        self.rows.iter().map(|r| r.objective).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_gap(&self) -> Option<f64> {
        let gaps: Vec<f64> = self.rows.iter().filter_map(|r| r.gap).collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }

    pub fn mean_seconds(&self) -> f64 {
        self.total_seconds() / self.rows.len().max(1) as f64
    }

    /// Tab-separated rows with `#` header and footer lines.
    pub fn to_tsv(&self, provenance: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# solver\t{}", self.solver);
        let _ = writeln!(out, "# reference\t{}", self.reference);
        if !provenance.is_empty() {
            let _ = writeln!(out, "# config\t{provenance}");
        }
        out.push_str("instance_id\tobj\tgap\tseconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{:.9}\t{}\t{:.6}", r.instance_id, r.objective, fmt_gap(r.gap), r.seconds);
        }
        let _ = writeln!(
            out,
            "# mean_obj\t{:.9}\n# mean_gap\t{}\n# total_seconds\t{:.6}\n# mean_seconds\t{:.6}",
            self.mean_objective(),
            fmt_gap(self.mean_gap()),
            self.total_seconds(),
            self.mean_seconds()
        );
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, provenance: &str) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv(provenance)).map_err(|e| Error::io(path, e))
    }
}

fn fmt_gap(gap: Option<f64>) -> String {
    gap.map_or_else(|| "nan".to_string(), |g| format!("{g:.9}"))
}

pub fn gap(objective: f64, reference: f64) -> Option<f64> {
    (reference > 0.0).then(|| (objective - reference) / reference)
}

/// Options shared by batch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Report zero seconds so outputs are byte-reproducible.
    pub no_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            no_timing: false,
        }
    }
}

/// Solves every instance, spreading instances over `workers` threads. The
/// output order and content do not depend on the worker count.
pub fn solve_all(solver: &dyn Solver, instances: &[Instance], options: RunOptions) -> Result<Vec<(Solution, f64)>> {
    let workers = options.workers.max(1).min(instances.len().max(1));
    let run = |inst: &Instance| -> Result<(Solution, f64)> {
        let started = Instant::now();
        let sol = solver.solve(inst)?;
        let secs = if options.no_timing { 0.0 } else { started.elapsed().as_secs_f64() };
        Ok((sol, secs))
    };
    if workers == 1 {
        return instances.iter().map(run).collect();
    }
    let mut slots: Vec<Option<Result<(Solution, f64)>>> = (0..instances.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run = &run;
                scope.spawn(move || {
                    (w..instances.len())
                        .step_by(workers)
                        .map(|i| (i, run(&instances[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("solver thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Runs `solver` on `instances` and compares with reference solutions, keyed
/// by instance id.
pub fn evaluate_benchmark(
    solver: &dyn Solver,
    instances: &[Instance],
    references: &[Solution],
    reference_name: &str,
    options: RunOptions,
) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, f64> = HashMap::new();
    for inst in instances {
        let reference = references
            .iter()
            .find(|s| s.instance_id == inst.id)
            .ok_or_else(|| Error::Config(format!("no reference solution for instance {}", inst.id)))?;
        by_id.insert(inst.id.as_str(), revalidate(inst, reference)?.objective);
    }
    let solved = solve_all(solver, instances, options)?;
    let rows = instances
        .iter()
        .zip(solved)
        .map(|(inst, (solution, seconds))| EvalRow {
            instance_id: inst.id.clone(),
            objective: solution.objective,
            gap: gap(solution.objective, by_id[inst.id.as_str()]),
            seconds,
            solution,
        })
        .collect();
    Ok(EvalReport {
        solver: solver.name(),
        reference: reference_name.to_string(),
        rows,
    })
}

/// Replays stored solutions, keyed by instance id.
#[derive(Debug, Clone)]
pub struct StoredSolutions {
    pub name: String,
    pub solutions: HashMap<String, Solution>,
}

impl StoredSolutions {
    pub fn new(name: impl Into<String>, solutions: Vec<Solution>) -> Self {
        StoredSolutions {
            name: name.into(),
            solutions: solutions.into_iter().map(|s| (s.instance_id.clone(), s)).collect(),
        }
    }
}

impl Solver for StoredSolutions {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn solve(&self, instance: &Instance) -> Result<Solution> {
        let s = self
            .solutions
            .get(&instance.id)
            .ok_or_else(|| Error::Config(format!("no stored solution for instance {}", instance.id)))?;
        revalidate(instance, s)
    }
}

/// Re-evaluates a stored solution on its instance; a recorded objective that
/// disagrees with the recomputed one is rejected.
pub fn revalidate(instance: &Instance, stored: &Solution) -> Result<Solution> {
    let fresh = Solution::from_routes(instance, stored.routes.clone())?;
    let tolerance = 1e-9 * fresh.objective.abs().max(1.0);
    if (fresh.objective - stored.objective).abs() > tolerance {
        return Err(ValidationError::ObjectiveMismatch {
            recorded: stored.objective,
            recomputed: fresh.objective,
        }
        .into());
    }
    Ok(fresh)
}
