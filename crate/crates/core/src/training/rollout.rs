use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Action, FleetState, Solution};
use crate::model::{greedy_index, NodeEncoding, Policy};
use crate::numerics::{masked_softmax_row, Scalar, Tape, Var};
use crate::problem::{distance_matrix, DistanceMatrix, Instance};

/// How each step's action is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Decode {
    /// Highest score, smallest flat index on ties.
    Greedy,
    /// Categorical draw; one seed per rollout.
    Sample(Vec<u64>),
    /// Replays given action sequences, one per rollout.
    Forced(Vec<Vec<Action>>),
}

/// A finished rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Index into the encoded instance list.
    pub source: usize,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
    pub solution: Solution,
}

impl Trajectory {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Per-step log-probabilities `[active]` with the rollouts they belong to.
#[derive(Debug, Clone)]
pub struct StepLogProbs {
    pub log_probs: Var,
    pub rollouts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub trajectories: Vec<Trajectory>,
    pub steps: Vec<StepLogProbs>,
    pub encoding: NodeEncoding,
}

impl RolloutOutput {
    /// `Σ_r w_r log p(τ_r)` on the tape.
    pub fn weighted_log_prob<T: Scalar>(&self, tape: &mut Tape<T>, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.trajectories.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} trajectories",
                weights.len(),
                self.trajectories.len()
            )));
        }
        let mut total: Option<Var> = None;
        for step in &self.steps {
            let w: Vec<f64> = step.rollouts.iter().map(|r| weights[*r]).collect();
            let term = tape.weighted_sum(step.log_probs, &w)?;
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::Contract("no decoding steps were recorded".into()))
    }
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Rolls out one trajectory per entry of `sources` on a shared tape.
///
/// `instances` are encoded once; rollout `r` runs on `instances[sources[r]]`.
/// All instances must share the fleet size and node count.
pub fn rollout<T: Scalar>(
    tape: &mut Tape<T>,
    policy: &Policy<'_, T>,
    instances: &[&Instance],
    sources: &[usize],
    decode: &Decode,
) -> Result<RolloutOutput> {
    let count = sources.len();
    if count == 0 {
        return Err(Error::Contract("rollout without trajectories".into()));
    }
    if let Some(bad) = sources.iter().find(|s| **s >= instances.len()) {
        return Err(Error::Contract(format!("rollout source {bad} out of range")));
    }
    match decode {
        Decode::Sample(seeds) if seeds.len() != count => {
            return Err(Error::Contract(format!("{} seeds for {count} rollouts", seeds.len())))
        }
        Decode::Forced(actions) if actions.len() != count => {
            return Err(Error::Contract(format!("{} forced sequences for {count} rollouts", actions.len())))
        }
        _ => {}
    }
    let m = instances[0].n_vehicles();
    if instances.iter().any(|i| i.n_vehicles() != m) {
        return Err(Error::Shape("instances in one rollout batch must share the fleet size".into()));
    }
    let s = instances[0].n_nodes();
    let d = policy.config().embed_dim;

    let encoding = policy.encode_nodes(tape, instances)?;
    let identity = sources.len() == instances.len() && sources.iter().enumerate().all(|(i, s)| i == *s);
    let nodes_all = if identity {
        encoding.nodes
    } else {
        tape.select_batch(encoding.nodes, sources)?
    };
    let ctx_all = policy.node_context(tape, nodes_all)?;

    let dists: Vec<DistanceMatrix> = instances.iter().map(|i| distance_matrix(i)).collect();
    let mut states: Vec<FleetState<'_>> = sources.iter().map(|src| FleetState::new(instances[*src], &dists[*src])).collect();
    let mut rngs: Vec<ChaCha8Rng> = match decode {
        Decode::Sample(seeds) => seeds.iter().map(|s| ChaCha8Rng::seed_from_u64(*s)).collect(),
        _ => Vec::new(),
    };
    let mut log_probs: Vec<Vec<f64>> = vec![Vec::new(); count];
    let mut steps = Vec::new();
    // Previous step's vehicle embeddings; rows follow `position`.
    let mut previous: Option<Var> = None;
    let mut chosen_vehicle = vec![0usize; count];
    let mut position = vec![usize::MAX; count];
    let max_steps = 2 * s + 2;

    for t in 0.. {
        let active: Vec<usize> = (0..count).filter(|r| !states[*r].is_terminal()).collect();
        if active.is_empty() {
            break;
        }
        if t > max_steps {
            return Err(Error::Contract(format!("rollout exceeded {max_steps} steps")));
        }
        let all = active.len() == count;
        let (nodes, ctx) = if all {
            (nodes_all, ctx_all)
        } else {
            let keys = tape.select_batch(ctx_all.keys, &active)?;
            let values = tape.select_batch(ctx_all.values, &active)?;
            (tape.select_batch(nodes_all, &active)?, crate::model::NodeContext { keys, values })
        };
        let state_refs: Vec<&FleetState<'_>> = active.iter().map(|r| &states[*r]).collect();
        let vehicles = policy.encode_vehicles(tape, nodes, ctx, &state_refs)?;

        let selected = match &previous {
            None => None,
            Some(prev) => {
                let idx: Vec<usize> = active.iter().map(|r| position[*r] * m + chosen_vehicle[*r]).collect();
                Some(tape.index_rows(*prev, &idx, d, &[active.len(), 1, d])?)
            }
        };
        let n_hat = policy.decoder_nodes(tape, selected, nodes)?;
        let logits = policy.pair_logits(tape, vehicles, n_hat)?;

        let width = m * s;
        let mut mask = Vec::with_capacity(active.len() * width);
        let mut picks = Vec::with_capacity(active.len());
        {
            let values = tape.value(logits).data();
            for (row, r) in active.iter().enumerate() {
                let am = states[*r].action_mask()?;
                let feas = am.as_slice();
                let lrow = &values[row * width..(row + 1) * width];
                let pick = match decode {
                    Decode::Greedy => greedy_index(lrow, feas)
                        .ok_or_else(|| Error::Contract("no feasible action".into()))?,
                    Decode::Sample(_) => {
                        let probs = masked_softmax_row(lrow, Some(feas))
                            .ok_or_else(|| Error::Contract("no feasible action".into()))?;
                        sample_index(&probs, &mut rngs[*r])
                    }
                    Decode::Forced(seqs) => {
                        let a = seqs[*r].get(t).copied().ok_or_else(|| {
                            Error::Contract(format!("forced sequence {r} ends before the episode"))
                        })?;
                        if a.vehicle >= m || a.node >= s {
                            return Err(Error::Contract(format!("forced action {a:?} out of range")));
                        }
                        am.flat_index(a)
                    }
                };
                mask.extend_from_slice(feas);
                picks.push(pick);
            }
        }
        let lp = tape.pick_log_softmax(logits, &mask, &picks)?;
        let lp_values = tape.value(lp).data().to_vec();
        for (row, r) in active.iter().enumerate() {
            let action = Action::new(picks[row] / s, picks[row] % s);
            states[*r].step(action)?;
            log_probs[*r].push(lp_values[row].f64());
            chosen_vehicle[*r] = action.vehicle;
            position[*r] = row;
        }
        steps.push(StepLogProbs {
            log_probs: lp,
            rollouts: active.clone(),
        });
        previous = Some(vehicles);
    }

    let mut trajectories = Vec::with_capacity(count);
    for (r, state) in states.iter().enumerate() {
        if let Decode::Forced(seqs) = decode {
            if seqs[r].len() != state.history().len() {
                return Err(Error::Contract(format!("forced sequence {r} is longer than the episode")));
            }
        }
        let (reward, solution) = state.finalize()?;
        let lp = std::mem::take(&mut log_probs[r]);
        if !lp.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite log-probability in rollout {r}")));
        }
        trajectories.push(Trajectory {
            source: sources[r],
            actions: state.history().to_vec(),
            log_probs: lp,
            reward,
            solution,
        });
    }
    Ok(RolloutOutput {
        trajectories,
        steps,
        encoding,
    })
}
