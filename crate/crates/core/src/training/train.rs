use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ModelConfig, ParameterSet};
use crate::numerics::{NormMode, Tape};
use crate::problem::{generate_instance, Distribution, GenConfig, Instance};
use crate::seeds;

use super::{advantages, augment_batch, rollout, surrogate_loss, Adam, AdamConfig, Decode};

const STREAM_TRAIN_INSTANCES: u64 = 0x7A11;
const STREAM_AUGMENT: u64 = 0xA06;
const STREAM_SAMPLES: u64 = 0x5A3;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub n_vehicles: usize,
    pub n_customers: usize,
    pub distribution: Distribution,
    pub batch_size: usize,
    pub augment: usize,
    pub vehicle_augment: bool,
    pub steps: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_size: usize,
    pub eval_seed: u64,
    /// Zero disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, n_vehicles: usize, n_customers: usize) -> Self {
        TrainConfig {
            model,
            n_vehicles,
            n_customers,
            distribution: Distribution::Uniform,
            batch_size: 128,
            augment: 8,
            vehicle_augment: true,
            steps: 500,
            optimizer: AdamConfig::default(),
            seed: 1,
            eval_every: 50,
            eval_size: 256,
            eval_seed: 9_000_000,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_instance_size(self.n_customers)?;
        if self.batch_size == 0 || self.n_vehicles == 0 || self.n_customers == 0 {
            return Err(Error::Config("batch size, fleet size and customer count must be positive".into()));
        }
        if self.augment == 0 || self.augment > super::TRANSFORM_COUNT {
            return Err(Error::Config(format!("augmentation count {} must lie in 1..=8", self.augment)));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn gen_config(&self, seed: u64) -> GenConfig {
        let mut g = GenConfig::new(self.n_customers, self.n_vehicles, seed);
        g.distribution = self.distribution;
        g
    }

    /// Training instances of step `step`.
    pub fn train_instances(&self, step: usize) -> Result<Vec<Instance>> {
        (0..self.batch_size)
            .map(|b| {
                let seed = seeds::derive_seed(self.seed, STREAM_TRAIN_INSTANCES, (step * self.batch_size + b) as u64);
                generate_instance(&self.gen_config(seed))
            })
            .collect()
    }

    /// The fixed held-out set used for periodic greedy evaluation.
    pub fn held_out(&self) -> Result<Vec<Instance>> {
        (0..self.eval_size)
            .map(|i| generate_instance(&self.gen_config(self.eval_seed + i as u64)))
            .collect()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_objective: f64,
    pub baseline_mean: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainOptions {
    /// Write zeros instead of wall-clock times so logs are reproducible.
    pub no_timing: bool,
    /// Print a progress line per evaluation to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet<f32>,
    pub metrics: Vec<StepMetrics>,
    /// `(step, held-out greedy mean objective)`.
    pub evaluations: Vec<(usize, f64)>,
}

pub fn metrics_tsv(metrics: &[StepMetrics]) -> String {
    let mut out = String::from("step\tmean_obj\tbaseline_mean\tgrad_norm\tseconds\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{}\t{:.9}\t{:.9}\t{:.9}\t{:.3}",
            m.step, m.mean_objective, m.baseline_mean, m.grad_norm, m.seconds
        );
    }
    out
}

pub fn evaluations_tsv(evals: &[(usize, f64)]) -> String {
    let mut out = String::from("step\theld_out_greedy_mean_obj\n");
    for (s, v) in evals {
        let _ = writeln!(out, "{s}\t{v:.9}");
    }
    out
}

/// Greedy objectives of `params` on `instances` with running statistics.
pub fn greedy_objectives(config: &ModelConfig, params: &ParameterSet<f32>, instances: &[Instance]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(64) {
        let refs: Vec<&Instance> = chunk.iter().collect();
        let mut tape = Tape::new();
        let policy = crate::model::Policy::bind(&mut tape, config, params, false, NormMode::Inference)?;
        let sources: Vec<usize> = (0..refs.len()).collect();
        let result = rollout(&mut tape, &policy, &refs, &sources, &Decode::Greedy)?;
        out.extend(result.trajectories.iter().map(|t| t.solution.objective));
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One optimization step on a fresh augmented batch. Returns the metrics line.
pub fn train_step(
    config: &TrainConfig,
    params: &mut ParameterSet<f32>,
    adam: &mut Adam,
    step: usize,
) -> Result<StepMetrics> {
    let started = Instant::now();
    let base = config.train_instances(step)?;
    let mut rng = seeds::rng_for(config.seed, STREAM_AUGMENT, step as u64);
    let batch = augment_batch(&base, config.augment, config.vehicle_augment, &mut rng)?;
    let instances = batch.instances();
    let count = instances.len();
    let sample_seeds: Vec<u64> = (0..count)
        .map(|r| seeds::derive_seed(config.seed, STREAM_SAMPLES, (step * count + r) as u64))
        .collect();
    let sources: Vec<usize> = (0..count).collect();

    let mut tape = Tape::new();
    let snapshot = params.clone();
    let policy = crate::model::Policy::bind(&mut tape, &config.model, &snapshot, true, NormMode::Train)?;
    let output = rollout(&mut tape, &policy, &instances, &sources, &Decode::Sample(sample_seeds))?;
    let rewards: Vec<f64> = output.trajectories.iter().map(|t| t.reward).collect();
    let (adv, baselines) = advantages(&rewards, config.augment)?;
    let loss = surrogate_loss(&mut tape, &output, &adv)?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss_value} at step {step} (mean reward {})",
            mean(&rewards)
        )));
    }
    let grads = tape.backward(loss)?;
    let grad_vecs: Vec<Vec<f32>> = policy
        .bound()
        .vars()
        .iter()
        .zip(snapshot.tensors())
        .map(|(v, t)| grads.get_or_zeros(*v, t.len()))
        .collect();
    let norm_stats: Vec<(String, crate::numerics::BatchStats)> = output
        .encoding
        .norms
        .iter()
        .map(|(name, var)| {
            tape.batch_stats(*var)
                .cloned()
                .map(|s| (name.clone(), s))
                .ok_or_else(|| Error::Contract(format!("{name} recorded no batch statistics")))
        })
        .collect::<Result<_>>()?;
    drop(policy);
    let grad_norm = adam.step(params, &grad_vecs)?;
    if !params.is_finite() {
        return Err(Error::Numeric(format!("non-finite parameters after step {step}")));
    }
    for (name, stats) in &norm_stats {
        params
            .running_mut(name)
            .expect("layer names come from the same layout")
            .update(stats, config.model.bn_momentum);
    }
    Ok(StepMetrics {
        step,
        mean_objective: -mean(&rewards),
        baseline_mean: mean(&baselines),
        grad_norm,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains from `init` (or a fresh initialization) and, when `out_dir` is
/// given, writes `config.json`, `metrics.tsv`, `eval.tsv` and checkpoints.
pub fn train(
    config: &TrainConfig,
    init: Option<ParameterSet<f32>>,
    out_dir: Option<&Path>,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = match init {
        Some(p) => p,
        None => ParameterSet::init(&config.model, config.seed)?,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(config).map_err(|e| Error::Contract(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    let held_out = if config.eval_every > 0 && config.eval_size > 0 {
        config.held_out()?
    } else {
        Vec::new()
    };
    let mut adam = Adam::new(config.optimizer, &params);
    let mut metrics = Vec::with_capacity(config.steps);
    let mut evaluations = Vec::new();
    let evaluate = |step: usize, params: &ParameterSet<f32>, evaluations: &mut Vec<(usize, f64)>| -> Result<()> {
        if held_out.is_empty() {
            return Ok(());
        }
        let v = mean(&greedy_objectives(&config.model, params, &held_out)?);
        if options.verbose {
            eprintln!("step {step}: held-out greedy mean objective {v:.6}");
        }
        evaluations.push((step, v));
        Ok(())
    };
    evaluate(0, &params, &mut evaluations)?;
    for step in 0..config.steps {
        let mut m = train_step(config, &mut params, &mut adam, step)?;
        if options.no_timing {
            m.seconds = 0.0;
        }
        metrics.push(m);
        let done = step + 1;
        if config.eval_every > 0 && (done % config.eval_every == 0 || done == config.steps) {
            evaluate(done, &params, &mut evaluations)?;
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                save_checkpoint(&params, &config.model, checkpoint_path(dir, done))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&params, &config.model, dir.join("final.ckpt"))?;
        let path = dir.join("metrics.tsv");
        fs::write(&path, metrics_tsv(&metrics)).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("eval.tsv");
        fs::write(&path, evaluations_tsv(&evaluations)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome {
        params,
        metrics,
        evaluations,
    })
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}
