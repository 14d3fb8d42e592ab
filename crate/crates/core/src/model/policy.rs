use crate::error::{Error, Result};
use crate::mdp::FleetState;
use crate::numerics::{masked_softmax_row, NormMode, Scalar, Tape, Tensor, Var};
use crate::problem::{DistanceMatrix, Instance};

use super::{Bound, EdgeFeatures, ModelConfig, ParameterSet};

/// Number of per-vehicle attributes fed to the vehicle encoder.
pub const VEHICLE_FEATURES: usize = 4;

/// Edge features of every node, `[N + 1, width]`.
pub fn edge_features<T: Scalar>(distances: &DistanceMatrix, mode: EdgeFeatures) -> Result<Tensor<T>> {
    let s = distances.size();
    match mode {
        EdgeFeatures::KnnSorted { k } => {
            if k + 1 > s {
                return Err(Error::Config(format!(
                    "knn edge features need k = {k} <= number of customers {}",
                    s - 1
                )));
            }
            let mut out = Vec::with_capacity(s * k);
            let mut row = Vec::with_capacity(s - 1);
            for j in 0..s {
                row.clear();
                row.extend((0..s).filter(|o| *o != j).map(|o| distances.get(j, o)));
                row.sort_by(f64::total_cmp);
                out.extend(row[..k].iter().map(|v| T::of(*v)));
            }
            Tensor::new(&[s, k], out)
        }
        EdgeFeatures::FullRow { nodes } => {
            if nodes != s {
                return Err(Error::Config(format!(
                    "full-row edge features were configured for {nodes} nodes, instance has {s}"
                )));
            }
            Tensor::from_f64(&[s, s], &(0..s).flat_map(|j| distances.row(j).to_vec()).collect::<Vec<_>>())
        }
    }
}

/// `(x, y, demand)` of every node.
pub fn node_attributes(instance: &Instance) -> Vec<f64> {
    (0..instance.n_nodes())
        .flat_map(|j| {
            let [x, y] = instance.coords(j);
            [x, y, f64::from(instance.demand(j))]
        })
        .collect()
}

/// `(speed, capacity, used capacity, clock)` of every vehicle.
///
/// Capacities are divided by the largest capacity of the fleet and clocks by
/// the largest clock of the same rollout (1 while every clock is zero).
pub fn vehicle_attributes(state: &FleetState<'_>) -> Vec<f64> {
    let vehicles = &state.instance().vehicles;
    let max_clock = state.clock.iter().copied().fold(0.0, f64::max);
    let clock_scale = if max_clock > 0.0 { max_clock } else { 1.0 };
    let cap_scale = f64::from(vehicles.iter().map(|v| v.capacity).max().unwrap_or(1).max(1));
    let mut out = Vec::with_capacity(vehicles.len() * VEHICLE_FEATURES);
    for (i, v) in vehicles.iter().enumerate() {
        out.extend([
            v.speed,
            f64::from(v.capacity) / cap_scale,
            f64::from(state.used_capacity[i]) / cap_scale,
            state.clock[i] / clock_scale,
        ]);
    }
    out
}

/// Key mask over nodes for vehicle cross-attention: served customers hidden,
/// depot always visible.
pub fn node_key_mask(state: &FleetState<'_>) -> Vec<bool> {
    state
        .remaining_demand
        .iter()
        .enumerate()
        .map(|(j, d)| j == 0 || *d > 0)
        .collect()
}

/// Tape handles produced by the node encoder for a batch of instances.
#[derive(Debug, Clone)]
pub struct NodeEncoding {
    /// Final node embeddings `[B, N + 1, d]`.
    pub nodes: Var,
    /// Output of the self-attention stack before edge fusion.
    pub blocks: Var,
    /// Edge-fusion gate `[B, N + 1, 1]`, when edge fusion is enabled.
    pub gate: Option<Var>,
    /// Batch-norm outputs by layer name, for running-statistic updates.
    pub norms: Vec<(String, Var)>,
}

/// Keys and values of the vehicle cross-attention, projected once per rollout.
#[derive(Debug, Clone, Copy)]
pub struct NodeContext {
    pub keys: Var,
    pub values: Var,
}

/// The policy network bound to one tape.
pub struct Policy<'p, T: Scalar> {
    config: &'p ModelConfig,
    params: &'p ParameterSet<T>,
    bound: Bound<'p>,
    norm_mode: NormMode,
}

impl<'p, T: Scalar> Policy<'p, T> {
    /// Registers `params` on `tape`; `trainable` decides whether gradients flow.
    pub fn bind(
        tape: &mut Tape<T>,
        config: &'p ModelConfig,
        params: &'p ParameterSet<T>,
        trainable: bool,
        norm_mode: NormMode,
    ) -> Result<Self> {
        config.validate()?;
        let bound = params.bind(tape, trainable);
        Ok(Policy {
            config,
            params,
            bound,
            norm_mode,
        })
    }

    /// Uses parameter variables that are already on the tape.
    pub fn with_bound(config: &'p ModelConfig, params: &'p ParameterSet<T>, bound: Bound<'p>, norm_mode: NormMode) -> Result<Self> {
        config.validate()?;
        Ok(Policy {
            config,
            params,
            bound,
            norm_mode,
        })
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    pub fn bound(&self) -> &Bound<'p> {
        &self.bound
    }

    fn w(&self, name: &str) -> Var {
        self.bound.var(name)
    }

    /// Multi-head attention with projected queries, keys and values.
    fn attend(&self, tape: &mut Tape<T>, prefix: &str, queries: Var, keys: Var, values: Var, mask: Option<&[bool]>) -> Result<Var> {
        let q = tape.matmul(queries, self.w(&format!("{prefix}.w_q")))?;
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let a = tape.attention(q, keys, values, self.config.heads, scale, mask)?;
        tape.matmul(a, self.w(&format!("{prefix}.w_o")))
    }

    fn mha(&self, tape: &mut Tape<T>, prefix: &str, queries: Var, source: Var, mask: Option<&[bool]>) -> Result<Var> {
        let k = tape.matmul(source, self.w(&format!("{prefix}.w_k")))?;
        let v = tape.matmul(source, self.w(&format!("{prefix}.w_v")))?;
        self.attend(tape, prefix, queries, k, v, mask)
    }

    fn batch_norm(&self, tape: &mut Tape<T>, name: &str, x: Var, norms: &mut Vec<(String, Var)>) -> Result<Var> {
        let running = match self.norm_mode {
            NormMode::Train => None,
            NormMode::Inference => Some(
                self.params
                    .running(name)
                    .ok_or_else(|| Error::Shape(format!("missing running statistics for {name}")))?
                    .as_f64(),
            ),
        };
        let y = tape.batch_norm(
            x,
            self.w(&format!("{name}.gamma")),
            self.w(&format!("{name}.beta")),
            self.norm_mode,
            running.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice())),
            self.config.bn_eps,
        )?;
        norms.push((name.to_string(), y));
        Ok(y)
    }

    /// Encodes a batch of instances that share their node count.
    pub fn encode_nodes(&self, tape: &mut Tape<T>, instances: &[&Instance]) -> Result<NodeEncoding> {
        let first = instances
            .first()
            .ok_or_else(|| Error::Contract("node encoder called on an empty batch".into()))?;
        let s = first.n_nodes();
        if instances.iter().any(|i| i.n_nodes() != s) {
            return Err(Error::Shape("instances in one batch must share the node count".into()));
        }
        self.config.check_instance_size(s - 1)?;
        let b = instances.len();
        let attrs: Vec<f64> = instances.iter().flat_map(|i| node_attributes(i)).collect();
        let u = tape.constant(Tensor::from_f64(&[b, s, 3], &attrs)?);
        let h = tape.matmul(u, self.w("node.w_no"))?;
        let mut h = tape.add_row(h, self.w("node.depot_token"), 0)?;

        let mut norms = Vec::new();
        for l in 0..self.config.encoder_layers {
            let p = format!("node.layer{l}");
            let a = self.mha(tape, &format!("{p}.attn"), h, h, None)?;
            let r = tape.add(h, a)?;
            let hb = self.batch_norm(tape, &format!("{p}.bn1"), r, &mut norms)?;
            let f = tape.matmul(hb, self.w(&format!("{p}.ff.w1")))?;
            let f = tape.relu(f);
            let f = tape.matmul(f, self.w(&format!("{p}.ff.w2")))?;
            let r = tape.add(hb, f)?;
            h = self.batch_norm(tape, &format!("{p}.bn2"), r, &mut norms)?;
        }
        if !tape.value(h).is_finite() {
            return Err(Error::Numeric("non-finite node embedding".into()));
        }
        if !self.config.dual_modality {
            return Ok(NodeEncoding {
                nodes: h,
                blocks: h,
                gate: None,
                norms,
            });
        }

        let width = self.config.edge_features.width();
        let mut raw = Vec::with_capacity(b * s * width);
        for inst in instances {
            let dist = crate::problem::distance_matrix(inst);
            raw.extend(edge_features::<T>(&dist, self.config.edge_features)?.into_data());
        }
        let e_raw = tape.constant(Tensor::new(&[b, s, width], raw)?);
        let e = tape.matmul(e_raw, self.w("node.w_ed"))?;
        let cross = self.mha(tape, "node.edge_attn", h, e, None)?;
        let both = tape.concat(cross, h)?;
        let gate = tape.matmul(both, self.w("node.gate.w_g"))?;
        let gate = tape.sigmoid(gate);
        let fused = tape.mul_rows(cross, gate)?;
        let nodes = tape.add(h, fused)?;
        if !tape.value(nodes).is_finite() {
            return Err(Error::Numeric("non-finite fused node embedding".into()));
        }
        Ok(NodeEncoding {
            nodes,
            blocks: h,
            gate: Some(gate),
            norms,
        })
    }

    /// Projects node embeddings into vehicle cross-attention keys and values.
    pub fn node_context(&self, tape: &mut Tape<T>, nodes: Var) -> Result<NodeContext> {
        Ok(NodeContext {
            keys: tape.matmul(nodes, self.w("vehicle.cross_attn.w_k"))?,
            values: tape.matmul(nodes, self.w("vehicle.cross_attn.w_v"))?,
        })
    }

    /// Vehicle embeddings `[B, M, d]` for one state per batch row.
    ///
    /// `nodes` and `context` must hold the same batch rows as `states`.
    pub fn encode_vehicles(
        &self,
        tape: &mut Tape<T>,
        nodes: Var,
        context: NodeContext,
        states: &[&FleetState<'_>],
    ) -> Result<Var> {
        let b = states.len();
        let m = states
            .first()
            .ok_or_else(|| Error::Contract("vehicle encoder called on an empty batch".into()))?
            .instance()
            .n_vehicles();
        if states.iter().any(|s| s.instance().n_vehicles() != m) {
            return Err(Error::Shape("states in one batch must share the fleet size".into()));
        }
        let attrs: Vec<f64> = states.iter().flat_map(|s| vehicle_attributes(s)).collect();
        let locations: Vec<usize> = states.iter().flat_map(|s| s.location.iter().copied()).collect();
        let mask: Vec<bool> = states.iter().flat_map(|s| node_key_mask(s)).collect();

        let f = tape.constant(Tensor::from_f64(&[b, m, VEHICLE_FEATURES], &attrs)?);
        let hid = tape.matmul(f, self.w("vehicle.w3"))?;
        let hid = tape.relu(hid);
        let base = tape.matmul(hid, self.w("vehicle.w4"))?;
        let pe = tape.gather_rows(nodes, &locations, m)?;
        let pe = tape.matmul(pe, self.w("vehicle.w_pe"))?;
        let m1 = tape.add(base, pe)?;
        let sa = self.mha(tape, "vehicle.self_attn", m1, m1, None)?;
        let m2 = tape.add(m1, sa)?;
        let ca = self.attend(tape, "vehicle.cross_attn", m2, context.keys, context.values, Some(&mask))?;
        let out = tape.add(m2, ca)?;
        if !tape.value(out).is_finite() {
            return Err(Error::Numeric("non-finite vehicle embedding".into()));
        }
        Ok(out)
    }

    /// Node embeddings seen by the scorer. `selected` is the embedding of the
    /// previously moved vehicle `[B, 1, d]`, absent at the first step.
    pub fn decoder_nodes(&self, tape: &mut Tape<T>, selected: Option<Var>, nodes: Var) -> Result<Var> {
        if self.config.pfca {
            pfca_update(tape, selected, nodes)
        } else {
            Ok(nodes)
        }
    }

    /// Clipped pair scores `[B, M, N + 1]`, before masking.
    pub fn pair_logits(&self, tape: &mut Tape<T>, vehicles: Var, nodes: Var) -> Result<Var> {
        pair_logits(tape, vehicles, nodes, self.config.logit_clip)
    }
}

/// Parameter-free cross-attention of every node onto the previously selected
/// vehicle embedding `selected [B, 1, d]`, with a residual connection.
pub fn pfca_update<T: Scalar>(tape: &mut Tape<T>, selected: Option<Var>, nodes: Var) -> Result<Var> {
    let Some(sel) = selected else {
        return Ok(nodes);
    };
    let d = tape.shape(nodes)[2];
    let a = tape.attention(nodes, sel, sel, 1, 1.0 / (d as f64).sqrt(), None)?;
    tape.add(a, nodes)
}

/// `clip * tanh(M Nᵀ / sqrt(d))`, one `[M, N + 1]` grid per batch row.
pub fn pair_logits<T: Scalar>(tape: &mut Tape<T>, vehicles: Var, nodes: Var, clip: f64) -> Result<Var> {
    let d = tape.shape(nodes)[2];
    let dots = tape.bmm_nt(vehicles, nodes)?;
    let scaled = tape.scale(dots, 1.0 / (d as f64).sqrt());
    let t = tape.tanh(scaled);
    Ok(tape.scale(t, clip))
}

/// Writes the masked sentinel into infeasible entries.
pub fn apply_mask<T: Scalar>(logits: &[T], feasible: &[bool]) -> Result<Vec<T>> {
    if logits.len() != feasible.len() {
        return Err(Error::Shape(format!("{} logits for a mask of {}", logits.len(), feasible.len())));
    }
    if !feasible.iter().any(|f| *f) {
        return Err(Error::Contract("every vehicle-node pair is masked".into()));
    }
    Ok(logits
        .iter()
        .zip(feasible)
        .map(|(l, f)| if *f { *l } else { T::MASKED })
        .collect())
}

/// Softmax over a flattened, masked score grid.
pub fn action_probabilities<T: Scalar>(masked_logits: &[T]) -> Result<Vec<f64>> {
    let open: Vec<bool> = masked_logits.iter().map(|v| *v > T::MASKED).collect();
    masked_softmax_row(masked_logits, Some(&open)).ok_or_else(|| Error::Contract("every vehicle-node pair is masked".into()))
}

/// Index of the largest feasible score; ties go to the smallest index.
pub fn greedy_index<T: Scalar>(logits: &[T], feasible: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, (l, f)) in logits.iter().zip(feasible).enumerate() {
        if *f && best.is_none_or(|(_, b)| *l > b) {
            best = Some((i, *l));
        }
    }
    best.map(|(i, _)| i)
}
