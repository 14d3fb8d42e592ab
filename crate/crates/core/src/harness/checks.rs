//! Invariant checks shared by `selftest` and the acceptance suite. Each check
//! is sized by its caller and reports the measured quantity, not just a flag.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{read_solution, write_solution, FleetState, Solution};
use crate::model::{
    checkpoint_bytes, checkpoint_from_bytes, greedy_index, load_checkpoint, pfca_update, EdgeFeatures,
    ModelConfig, ParameterSet, Policy,
};
use crate::numerics::{gradient_check, GradCheckReport, NormMode, Tape, Tensor, Var};
use crate::problem::{distance_matrix, generate_instance, read_instance, write_instance, GenConfig, Instance};
use crate::seeds;
use crate::training::{
    advantages, augment_batch, augment_instance, permute_routes, rollout, surrogate_loss, transform_instance, Decode,
    TRANSFORM_COUNT,
};

/// Result line of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail,
        }
    }

    /// Turns an error inside a check into a failed outcome.
    pub fn from_result(name: &str, result: Result<CheckOutcome>) -> CheckOutcome {
        result.unwrap_or_else(|e| CheckOutcome::new(name, false, format!("error: {e}")))
    }
}

fn instance(m: usize, n: usize, seed: u64) -> Result<Instance> {
    generate_instance(&GenConfig::new(n, m, seed))
}

/// Leg-by-leg duration of each route, written independently of the decision
/// process. Returns `None` on any constraint violation.
pub fn independent_durations(instance: &Instance, routes: &[Vec<usize>]) -> Option<Vec<f64>> {
    if routes.len() != instance.n_vehicles() {
        return None;
    }
    let mut seen = vec![0usize; instance.n_nodes()];
    let mut out = Vec::with_capacity(routes.len());
    for (v, route) in routes.iter().enumerate() {
        let vehicle = instance.vehicles[v];
        let (mut at, mut load, mut time) = (instance.depot, 0u64, 0.0f64);
        for &node in route {
            if node >= instance.n_nodes() {
                return None;
            }
            let next = instance.coords(node);
            time += ((next[0] - at[0]).powi(2) + (next[1] - at[1]).powi(2)).sqrt() / vehicle.speed;
            at = next;
            if node == 0 {
                load = 0;
            } else {
                seen[node] += 1;
                load += instance.customers[node - 1].demand as u64;
                if load > vehicle.capacity as u64 {
                    return None;
                }
            }
        }
        time += ((instance.depot[0] - at[0]).powi(2) + (instance.depot[1] - at[1]).powi(2)).sqrt() / vehicle.speed;
        out.push(time);
    }
    seen[1..].iter().all(|c| *c == 1).then_some(out)
}

/// Finite-difference check of the policy-gradient surrogate in `f64` on fixed
/// sampled action sequences.
pub fn surrogate_gradient(embed_dim: usize, layers: usize, m: usize, n: usize, probes: usize, seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::with_dims(embed_dim, layers, EdgeFeatures::KnnSorted { k: n.min(3) });
    let params: ParameterSet<f64> = ParameterSet::<f32>::init(&cfg, seed)?.cast();
    let insts: Vec<Instance> = (0..2).map(|i| instance(m, n, seed.wrapping_add(i))).collect::<Result<_>>()?;
    let refs: Vec<&Instance> = insts.iter().collect();
    let sources = [0, 0, 0, 1, 1, 1];
    let sample_seeds: Vec<u64> = (0..sources.len() as u64).map(|i| seeds::derive_seed(seed, 0x6C4, i)).collect();

    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &params, false, NormMode::Train)?;
    let sampled = rollout(&mut tape, &policy, &refs, &sources, &Decode::Sample(sample_seeds))?;
    let forced = Decode::Forced(sampled.trajectories.iter().map(|t| t.actions.clone()).collect());
    let rewards: Vec<f64> = sampled.trajectories.iter().map(|t| t.reward).collect();
    let (adv, _) = advantages(&rewards, 3)?;

    let loss = |tape: &mut Tape<f64>, vars: &[Var]| {
        let bound = params.bind_vars(vars)?;
        let policy = Policy::with_bound(&cfg, &params, bound, NormMode::Train)?;
        let out = rollout(tape, &policy, &refs, &sources, &forced)?;
        surrogate_loss(tape, &out, &adv)
    };
    gradient_check(loss, params.tensors(), probes, seed)
}

pub fn gradient_outcome(probes: usize, seed: u64) -> CheckOutcome {
    let name = "gradient check (d=8, L=2, M=2, N=5, f64)";
    CheckOutcome::from_result(
        name,
        surrogate_gradient(8, 2, 2, 5, probes, seed).map(|r| {
            CheckOutcome::new(
                name,
                r.max_relative_error < 1e-4,
                format!("{} probes, max relative error {:.3e}", r.probes, r.max_relative_error),
            )
        }),
    )
}

/// Counts of a sampling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeasibilityReport {
    pub rollouts: usize,
    pub violations: usize,
    pub max_reward_error: f64,
}

/// Samples `rollouts` trajectories from an untrained policy across fleet sizes
/// `{2, 3, 5}` and customer counts `{10, 20}` and audits every one.
pub fn sampling_feasibility(rollouts: usize, seed: u64) -> Result<FeasibilityReport> {
    let cfg = ModelConfig::with_dims(16, 1, EdgeFeatures::KnnSorted { k: 5 });
    let params = ParameterSet::<f32>::init(&cfg, seed)?;
    let scales = [(2, 10), (3, 10), (5, 10), (2, 20), (3, 20), (5, 20)];
    let per_instance = 50;
    let mut report = FeasibilityReport::default();
    let mut next = 0u64;
    while report.rollouts < rollouts {
        let (m, n) = scales[next as usize % scales.len()];
        let inst = instance(m, n, seeds::derive_seed(seed, 0xFEA5, next))?;
        let count = per_instance.min(rollouts - report.rollouts);
        let sample_seeds: Vec<u64> = (0..count as u64).map(|i| seeds::derive_seed(seed, next, i)).collect();
        next += 1;
        let mut tape = Tape::new();
        let policy = Policy::bind(&mut tape, &cfg, &params, false, NormMode::Inference)?;
        let out = rollout(&mut tape, &policy, &[&inst], &vec![0; count], &Decode::Sample(sample_seeds))?;
        for t in &out.trajectories {
            report.rollouts += 1;
            match independent_durations(&inst, &t.solution.routes) {
                Some(d) => {
                    let obj = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let err = (t.reward + obj).abs();
                    report.max_reward_error = report.max_reward_error.max(err);
                    if err > 1e-12 {
                        report.violations += 1;
                    }
                }
                None => report.violations += 1,
            }
        }
    }
    Ok(report)
}

pub fn feasibility_outcome(rollouts: usize, seed: u64) -> CheckOutcome {
    let name = "mask soundness under sampling";
    CheckOutcome::from_result(
        name,
        sampling_feasibility(rollouts, seed).map(|r| {
            CheckOutcome::new(
                name,
                r.violations == 0,
                format!(
                    "{} rollouts, {} violations, max |reward + objective| {:.1e}",
                    r.rollouts, r.violations, r.max_reward_error
                ),
            )
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymmetryReport {
    pub instances: usize,
    pub max_distance_error: f64,
    pub max_objective_error: f64,
    pub max_advantage_sum: f64,
}

/// Distance preservation of all eight maps, objective invariance of a fixed
/// solution on augmented variants, and centering of shared-baseline advantages.
pub fn symmetry(instances: usize, seed: u64) -> Result<SymmetryReport> {
    let mut rng = seeds::rng_for(seed, 0x5E7, 0);
    let mut report = SymmetryReport {
        instances,
        ..Default::default()
    };
    for i in 0..instances {
        let m = rng.gen_range(1..=5);
        let n = rng.gen_range(1..=20);
        let inst = instance(m, n, seeds::derive_seed(seed, 0x5E8, i as u64))?;
        let base = distance_matrix(&inst);
        for t in 0..TRANSFORM_COUNT {
            let d = distance_matrix(&transform_instance(&inst, t)?);
            for a in 0..inst.n_nodes() {
                for b in 0..inst.n_nodes() {
                    report.max_distance_error = report.max_distance_error.max((d.get(a, b) - base.get(a, b)).abs());
                }
            }
        }
        let routes = crate::baselines::greedy_construction(&inst)?.routes;
        let objective = crate::mdp::evaluate_solution(&inst, &routes)?;
        for v in augment_instance(&inst, 0, TRANSFORM_COUNT, true, &mut rng)? {
            let obj = crate::mdp::evaluate_solution(&v.instance, &permute_routes(&routes, &v.permutation))?;
            report.max_objective_error = report.max_objective_error.max((obj - objective).abs());
        }
        let rewards: Vec<f64> = (0..TRANSFORM_COUNT).map(|_| -rng.gen_range(0.1..50.0)).collect();
        let (adv, _) = advantages(&rewards, TRANSFORM_COUNT)?;
        report.max_advantage_sum = report.max_advantage_sum.max(adv.iter().sum::<f64>().abs());
    }
    Ok(report)
}

pub fn symmetry_outcome(instances: usize, seed: u64) -> CheckOutcome {
    let name = "augmentation symmetry";
    CheckOutcome::from_result(
        name,
        symmetry(instances, seed).map(|r| {
            CheckOutcome::new(
                name,
                r.max_distance_error <= 1e-12 && r.max_objective_error <= 1e-12 && r.max_advantage_sum <= 1e-9,
                format!(
                    "{} instances, distance {:.1e}, objective {:.1e}, advantage sum {:.1e}",
                    r.instances, r.max_distance_error, r.max_objective_error, r.max_advantage_sum
                ),
            )
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EquivarianceReport {
    pub trials: usize,
    pub vehicle_rows: f64,
    pub logit_rows: f64,
    pub node_rows: f64,
    pub logit_columns: f64,
    pub argmax_mismatches: usize,
}

struct Probe {
    vehicles: Vec<f32>,
    nodes: Vec<f32>,
    logits: Vec<f32>,
    /// Open pairs attaining the highest score, ascending.
    maximizers: Vec<usize>,
}

fn probe(cfg: &ModelConfig, params: &ParameterSet<f32>, state: &FleetState<'_>, selected: usize) -> Result<Probe> {
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, cfg, params, false, NormMode::Inference)?;
    let enc = policy.encode_nodes(&mut tape, &[state.instance()])?;
    let ctx = policy.node_context(&mut tape, enc.nodes)?;
    let vehicles = policy.encode_vehicles(&mut tape, enc.nodes, ctx, &[state])?;
    let d = cfg.embed_dim;
    let sel = tape.index_rows(vehicles, &[selected], d, &[1, 1, d])?;
    let n_hat = policy.decoder_nodes(&mut tape, Some(sel), enc.nodes)?;
    let logits = policy.pair_logits(&mut tape, vehicles, n_hat)?;
    let logits = tape.value(logits).data().to_vec();
    let mask = state.action_mask()?;
    let open = mask.as_slice();
    let best = greedy_index(&logits, open).ok_or_else(|| Error::Contract("no open pair".into()))?;
    let maximizers = (0..logits.len()).filter(|&i| open[i] && logits[i] == logits[best]).collect();
    Ok(Probe {
        vehicles: tape.value(vehicles).data().to_vec(),
        nodes: tape.value(enc.nodes).data().to_vec(),
        logits,
        maximizers,
    })
}

/// Relabels vehicles (`vperm`, new `i` is old `vperm[i]`) and customers
/// (`cperm`, new customer `k + 1` is old `cperm[k] + 1`) on a mid-episode
/// state and compares embeddings and scores against the original labels.
pub fn equivariance(trials: usize, seed: u64) -> Result<EquivarianceReport> {
    let cfg = ModelConfig::with_dims(32, 2, EdgeFeatures::KnnSorted { k: 4 });
    let params = ParameterSet::<f32>::init(&cfg, seed)?;
    let mut rng = seeds::rng_for(seed, 0xE9, 0);
    let d = cfg.embed_dim;
    let mut report = EquivarianceReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let m = rng.gen_range(2..=4);
        let n = rng.gen_range(6..=12);
        let inst = instance(m, n, seeds::derive_seed(seed, 0xEA, trial as u64))?;
        let dist = distance_matrix(&inst);
        let mut state = FleetState::new(&inst, &dist);
        for _ in 0..rng.gen_range(0..n) {
            let mask = state.action_mask()?;
            let open: Vec<usize> = (0..mask.as_slice().len()).filter(|i| mask.as_slice()[*i]).collect();
            state.step(mask.action_at(*open.choose(&mut rng).expect("open pair")))?;
            if state.unserved() <= 1 {
                break;
            }
        }
        let mut vperm: Vec<usize> = (0..m).collect();
        vperm.shuffle(&mut rng);
        let mut cperm: Vec<usize> = (0..n).collect();
        cperm.shuffle(&mut rng);
        // new node index of every old node
        let mut node_map = vec![0usize; n + 1];
        for (k, old) in cperm.iter().enumerate() {
            node_map[old + 1] = k + 1;
        }
        let pinst = inst.permute_customers(&cperm)?.permute_vehicles(&vperm)?;
        let pdist = distance_matrix(&pinst);
        let mut pstate = FleetState::new(&pinst, &pdist);
        pstate.used_capacity = vperm.iter().map(|o| state.used_capacity[*o]).collect();
        pstate.clock = vperm.iter().map(|o| state.clock[*o]).collect();
        pstate.location = vperm.iter().map(|o| node_map[state.location[*o]]).collect();
        pstate.remaining_demand = (0..=n)
            .map(|j| if j == 0 { state.remaining_demand[0] } else { state.remaining_demand[cperm[j - 1] + 1] })
            .collect();

        let selected = rng.gen_range(0..m);
        let new_selected = vperm.iter().position(|o| *o == selected).expect("permutation");
        let a = probe(&cfg, &params, &state, selected)?;
        let b = probe(&cfg, &params, &pstate, new_selected)?;
        let s = n + 1;
        for (new_v, old_v) in vperm.iter().enumerate() {
            for c in 0..d {
                let e = (b.vehicles[new_v * d + c] - a.vehicles[old_v * d + c]).abs() as f64;
                report.vehicle_rows = report.vehicle_rows.max(e);
            }
            for old_j in 0..s {
                let e = (b.logits[new_v * s + node_map[old_j]] - a.logits[old_v * s + old_j]).abs() as f64;
                report.logit_rows = report.logit_rows.max(e);
                report.logit_columns = report.logit_columns.max(e);
            }
        }
        for old_j in 0..s {
            for c in 0..d {
                let e = (b.nodes[node_map[old_j] * d + c] - a.nodes[old_j * d + c]).abs() as f64;
                report.node_rows = report.node_rows.max(e);
            }
        }
        // Clipped scores tie exactly, so compare the sets of maximizers.
        let mut expected: Vec<usize> = a
            .maximizers
            .iter()
            .map(|p| {
                let new_v = vperm.iter().position(|o| *o == p / s).expect("permutation");
                new_v * s + node_map[p % s]
            })
            .collect();
        expected.sort_unstable();
        if b.maximizers != expected {
            report.argmax_mismatches += 1;
        }
    }
    Ok(report)
}

pub fn equivariance_outcome(trials: usize, seed: u64) -> CheckOutcome {
    let name = "vehicle and customer equivariance (f32)";
    CheckOutcome::from_result(
        name,
        equivariance(trials, seed).map(|r| {
            let worst = r.vehicle_rows.max(r.logit_rows).max(r.node_rows).max(r.logit_columns);
            CheckOutcome::new(
                name,
                worst < 1e-6 && r.argmax_mismatches == 0,
                format!(
                    "{} trials, vehicles {:.1e}, nodes {:.1e}, logits {:.1e}, argmax mismatches {}",
                    r.trials, r.vehicle_rows, r.node_rows, r.logit_rows, r.argmax_mismatches
                ),
            )
        }),
    )
}

/// First-step identity, the one-dimensional closed form, and an unchanged
/// parameter count with the update switched off.
pub fn pfca_contract(seed: u64) -> Result<CheckOutcome> {
    let name = "PFCA contract";
    let mut problems = Vec::new();

    let cfg = ModelConfig::with_dims(16, 1, EdgeFeatures::KnnSorted { k: 3 });
    let params = ParameterSet::<f32>::init(&cfg, seed)?;
    let inst = instance(3, 7, seed)?;
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &params, false, NormMode::Inference)?;
    let enc = policy.encode_nodes(&mut tape, &[&inst])?;
    let first = policy.decoder_nodes(&mut tape, None, enc.nodes)?;
    if tape.value(first).data() != tape.value(enc.nodes).data() {
        problems.push("first-step nodes differ".to_string());
    }

    let mut t = Tape::<f64>::new();
    let n = t.constant(Tensor::from_f64(&[1, 2, 1], &[1.0, 2.0])?);
    let ms = t.constant(Tensor::from_f64(&[1, 1, 1], &[3.0])?);
    let out = pfca_update(&mut t, Some(ms), n)?;
    if t.value(out).data() != [4.0, 5.0] {
        problems.push(format!("closed form gave {:?}", t.value(out).data()));
    }

    let mut off = cfg.clone();
    off.pfca = false;
    let count_on = params.count();
    let count_off = ParameterSet::<f32>::init(&off, seed)?.count();
    if count_on != count_off {
        problems.push(format!("parameter count {count_on} vs {count_off}"));
    }
    let detail = if problems.is_empty() {
        format!("closed form [[4],[5]], {count_on} parameters either way")
    } else {
        problems.join("; ")
    };
    Ok(CheckOutcome::new(name, problems.is_empty(), detail))
}

/// Each ablation switch leaves its pathway inert.
pub fn ablations(seed: u64) -> Result<CheckOutcome> {
    let name = "ablation switches";
    let mut problems = Vec::new();
    let inst = instance(3, 8, seed)?;

    let mut cfg = ModelConfig::with_dims(16, 2, EdgeFeatures::KnnSorted { k: 3 });
    cfg.dual_modality = false;
    let params = ParameterSet::<f32>::init(&cfg, seed)?;
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &params, false, NormMode::Inference)?;
    let enc = policy.encode_nodes(&mut tape, &[&inst])?;
    if tape.value(enc.nodes).data() != tape.value(enc.blocks).data() || enc.gate.is_some() {
        problems.push("dual-modality off still fuses edges".to_string());
    }

    let mut cfg = ModelConfig::with_dims(16, 2, EdgeFeatures::KnnSorted { k: 3 });
    cfg.pfca = false;
    let params = ParameterSet::<f32>::init(&cfg, seed)?;
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &params, false, NormMode::Inference)?;
    let enc = policy.encode_nodes(&mut tape, &[&inst])?;
    let mut rng = seeds::rng_for(seed, 0xAB1, 0);
    for _ in 0..5 {
        let sel = tape.constant(Tensor::from_fn(&[1, 1, 16], |_| rng.gen_range(-3.0..3.0)));
        let n_hat = policy.decoder_nodes(&mut tape, Some(sel), enc.nodes)?;
        if tape.value(n_hat).data() != tape.value(enc.nodes).data() {
            problems.push("PFCA off still changes nodes".to_string());
            break;
        }
    }

    let base: Vec<Instance> = (0..4).map(|i| instance(4, 6, seed + i)).collect::<Result<_>>()?;
    let batch = augment_batch(&base, TRANSFORM_COUNT, false, &mut rng)?;
    let identity: Vec<usize> = (0..4).collect();
    if batch.variants.iter().any(|v| v.permutation != identity) {
        problems.push("vehicle augmentation off still permutes".to_string());
    }
    let detail = if problems.is_empty() {
        "dual-modality, PFCA and vehicle augmentation each inert".to_string()
    } else {
        problems.join("; ")
    };
    Ok(CheckOutcome::new(name, problems.is_empty(), detail))
}

/// Instance, solution and checkpoint files read back field-for-field.
pub fn round_trips(dir: &Path, seed: u64) -> Result<CheckOutcome> {
    let name = "file round trips";
    let mut problems = Vec::new();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..5 {
        let inst = generate_instance(&GenConfig::new(12, 3, seed + i).clustered(0.05))?;
        let path = dir.join(format!("{}.json", inst.id));
        write_instance(&inst, &path)?;
        if read_instance(&path)? != inst {
            problems.push(format!("instance {} changed", inst.id));
        }
        let sol: Solution = crate::baselines::greedy_construction(&inst)?;
        let path = dir.join(format!("{}.sol.json", inst.id));
        write_solution(&sol, None, &path)?;
        if read_solution(&path)? != sol {
            problems.push(format!("solution {} changed", inst.id));
        }
    }
    let cfg = ModelConfig::with_dims(16, 1, EdgeFeatures::KnnSorted { k: 3 });
    let params = ParameterSet::<f32>::init(&cfg, seed)?;
    let bytes = checkpoint_bytes(&params, &cfg)?;
    let (back, back_cfg) = checkpoint_from_bytes::<f32>(&bytes, &dir.join("probe.ckpt"))?;
    if back != params || back_cfg != cfg {
        problems.push("checkpoint changed".to_string());
    }
    let detail = if problems.is_empty() {
        "instances, solutions and checkpoints identical after reload".to_string()
    } else {
        problems.join("; ")
    };
    Ok(CheckOutcome::new(name, problems.is_empty(), detail))
}

/// Loads a checkpoint file and greedily decodes one instance with it.
pub fn checkpoint_file(path: &Path, seed: u64) -> Result<CheckOutcome> {
    let name = "checkpoint fixture";
    let (params, cfg) = load_checkpoint::<f32>(path)?;
    let n = match cfg.edge_features {
        EdgeFeatures::KnnSorted { k } => k.max(6),
        EdgeFeatures::FullRow { nodes } => nodes - 1,
    };
    let inst = instance(2, n, seed)?;
    let model = crate::inference::Model::new(cfg, params);
    let sol = crate::inference::solve_greedy(&model, &inst)?;
    Ok(CheckOutcome::new(
        name,
        true,
        format!("{} loaded, greedy objective {:.6}", path.display(), sol.objective),
    ))
}
