use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Var};

use super::RolloutOutput;

/// Shared-baseline advantages for rewards grouped as `k` consecutive variants
/// per base instance. Returns `(advantages, baselines)`.
pub fn advantages(rewards: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k == 0 || rewards.is_empty() || !rewards.len().is_multiple_of(k) {
        return Err(Error::Contract(format!(
            "{} rewards cannot be grouped into blocks of {k}",
            rewards.len()
        )));
    }
    let mut adv = Vec::with_capacity(rewards.len());
    let mut baselines = Vec::with_capacity(rewards.len() / k);
    for group in rewards.chunks(k) {
        let b = group.iter().sum::<f64>() / k as f64;
        baselines.push(b);
        adv.extend(group.iter().map(|r| r - b));
    }
    Ok((adv, baselines))
}

/// `-(1 / (B K)) Σ A log p(τ)`; its gradient is the REINFORCE estimate for
/// gradient descent. Rewards enter as constants.
pub fn surrogate_loss<T: Scalar>(tape: &mut Tape<T>, output: &RolloutOutput, advantages: &[f64]) -> Result<Var> {
    let n = output.trajectories.len() as f64;
    let weights: Vec<f64> = advantages.iter().map(|a| -a / n).collect();
    output.weighted_log_prob(tape, &weights)
}
