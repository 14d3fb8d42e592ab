use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::numerics::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm bound; non-positive disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
        }
    }
}

/// Adam with global-norm clipping; moments kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

/// Euclidean norm of all gradients together.
pub fn global_norm<T: Scalar>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt()
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, params: &ParameterSet<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Clips, updates and returns the pre-clip gradient norm.
    pub fn step<T: Scalar>(&mut self, params: &mut ParameterSet<T>, grads: &[Vec<T>]) -> Result<f64> {
        if grads.len() != self.m.len() {
            return Err(Error::Shape(format!("{} gradients for {} tensors", grads.len(), self.m.len())));
        }
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm is {norm}")));
        }
        let c = self.config;
        let factor = if c.clip > 0.0 && norm > c.clip { c.clip / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            if grads[i].len() != tensor.len() {
                return Err(Error::Shape(format!("gradient {i} has the wrong length")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grads[i][j].f64() * factor;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let update = c.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                *w = T::of(w.f64() - update);
            }
        }
        Ok(norm)
    }
}
