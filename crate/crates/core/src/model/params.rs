use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{BatchStats, Scalar, Tape, Tensor, Var};
use crate::seeds;

use super::ModelConfig;

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, fan-in = rows.
    FanIn,
    Zeros,
    Ones,
}

/// Names, shapes and initializers of every trainable tensor, plus the names of
/// the batch-norm layers that keep running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub params: Vec<(String, Vec<usize>, Init)>,
    pub norms: Vec<(String, usize)>,
}

fn attention_params(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    for w in ["w_q", "w_k", "w_v", "w_o"] {
        out.push((format!("{prefix}.{w}"), vec![d, d], Init::FanIn));
    }
}

impl Layout {
    pub fn for_config(config: &ModelConfig) -> Layout {
        let d = config.embed_dim;
        let mut params = Vec::new();
        let mut norms = Vec::new();
        params.push(("node.w_no".to_string(), vec![3, d], Init::FanIn));
        params.push(("node.depot_token".to_string(), vec![d], Init::Zeros));
        for l in 0..config.encoder_layers {
            let p = format!("node.layer{l}");
            attention_params(&mut params, &format!("{p}.attn"), d);
            for bn in ["bn1", "bn2"] {
                params.push((format!("{p}.{bn}.gamma"), vec![d], Init::Ones));
                params.push((format!("{p}.{bn}.beta"), vec![d], Init::Zeros));
                norms.push((format!("{p}.{bn}"), d));
            }
            params.push((format!("{p}.ff.w1"), vec![d, 4 * d], Init::FanIn));
            params.push((format!("{p}.ff.w2"), vec![4 * d, d], Init::FanIn));
        }
        if config.dual_modality {
            params.push(("node.w_ed".to_string(), vec![config.edge_features.width(), d], Init::FanIn));
            attention_params(&mut params, "node.edge_attn", d);
            params.push(("node.gate.w_g".to_string(), vec![2 * d, 1], Init::FanIn));
        }
        params.push(("vehicle.w3".to_string(), vec![4, 4 * d], Init::FanIn));
        params.push(("vehicle.w4".to_string(), vec![4 * d, d], Init::FanIn));
        params.push(("vehicle.w_pe".to_string(), vec![d, d], Init::FanIn));
        attention_params(&mut params, "vehicle.self_attn", d);
        attention_params(&mut params, "vehicle.cross_attn", d);
        Layout { params, norms }
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    fn fresh(d: usize) -> Self {
        RunningStats {
            mean: vec![0.0; d],
            var: vec![1.0; d],
        }
    }

    pub fn as_f64(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.mean.iter().map(|v| f64::from(*v)).collect(),
            self.var.iter().map(|v| f64::from(*v)).collect(),
        )
    }

    /// Exponential moving average with unbiased batch variance.
    pub fn update(&mut self, stats: &BatchStats, momentum: f64) {
        let n = stats.count as f64;
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.mean.len() {
            let m = (1.0 - momentum) * f64::from(self.mean[c]) + momentum * stats.mean[c];
            let v = (1.0 - momentum) * f64::from(self.var[c]) + momentum * stats.var[c] * correction;
            self.mean[c] = m as f32;
            self.var[c] = v as f32;
        }
    }
}

/// Every trainable tensor of the policy, addressable by a stable name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
    norm_names: Vec<String>,
    norms: Vec<RunningStats>,
}

impl<T: Scalar> ParameterSet<T> {
    /// Fan-in uniform weights, zero depot token, unit/zero batch-norm affine.
    ///
    /// Values are drawn in single precision so that a freshly initialized
    /// 64-bit set survives a checkpoint round trip bit for bit.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(config);
        let mut rng = seeds::rng_for(seed, 0x1417, 0);
        let mut tensors = Vec::with_capacity(layout.params.len());
        for (_, shape, init) in &layout.params {
            let t = match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::from_fn(shape, |_| T::one()),
                Init::FanIn => {
                    let bound = 1.0 / (shape[0] as f32).sqrt();
                    Tensor::from_fn(shape, |_| T::of(f64::from(rng.gen_range(-bound..bound))))
                }
            };
            tensors.push(t);
        }
        let norms = layout.norms.iter().map(|(_, d)| RunningStats::fresh(*d)).collect();
        Self::assemble(&layout, tensors, norms)
    }

    pub(crate) fn assemble(layout: &Layout, tensors: Vec<Tensor<T>>, norms: Vec<RunningStats>) -> Result<Self> {
        if tensors.len() != layout.params.len() || norms.len() != layout.norms.len() {
            return Err(Error::Shape("parameter count does not match the model layout".into()));
        }
        for ((name, shape, _), t) in layout.params.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, found {:?}", t.shape())));
            }
        }
        for ((name, d), s) in layout.norms.iter().zip(&norms) {
            if s.mean.len() != *d || s.var.len() != *d {
                return Err(Error::Shape(format!("{name}: running statistics of width {d} expected")));
            }
        }
        let names: Vec<String> = layout.params.iter().map(|(n, _, _)| n.clone()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(ParameterSet {
            names,
            tensors,
            index,
            norm_names: layout.norms.iter().map(|(n, _)| n.clone()).collect(),
            norms,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|i| &self.tensors[*i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|i| &mut self.tensors[*i])
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn norm_names(&self) -> &[String] {
        &self.norm_names
    }

    pub fn running(&self, norm: &str) -> Option<&RunningStats> {
        self.norm_names.iter().position(|n| n == norm).map(|i| &self.norms[i])
    }

    pub fn running_mut(&mut self, norm: &str) -> Option<&mut RunningStats> {
        self.norm_names.iter().position(|n| n == norm).map(move |i| &mut self.norms[i])
    }

    pub(crate) fn norms(&self) -> &[RunningStats] {
        &self.norms
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
            norm_names: self.norm_names.clone(),
            norms: self.norms.clone(),
        }
    }

    /// Registers every tensor on `tape`, as parameters or as constants.
    pub fn bind<'p>(&'p self, tape: &mut Tape<T>, trainable: bool) -> Bound<'p> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.parameter(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars, index: &self.index }
    }

    /// Wraps variables already on a tape, in [`ParameterSet::names`] order.
    pub fn bind_vars<'p>(&'p self, vars: &[Var]) -> Result<Bound<'p>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Shape(format!("{} variables for {} parameters", vars.len(), self.tensors.len())));
        }
        Ok(Bound {
            vars: vars.to_vec(),
            index: &self.index,
        })
    }
}

/// Tape handles of a bound [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct Bound<'p> {
    vars: Vec<Var>,
    index: &'p HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(i) => self.vars[*i],
            None => panic!("parameter `{name}` is not part of this model"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
