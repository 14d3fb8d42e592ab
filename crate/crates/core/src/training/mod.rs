//! Symmetry augmentation, rollouts, the policy-gradient objective and the
//! optimization loop.

mod augment;
mod optim;
mod reinforce;
mod rollout;
mod train;

pub use augment::{
    augment_batch, augment_instance, node_transform, permute_routes, transform_instance, unpermute_routes,
    AugmentedBatch, Variant, TRANSFORM_COUNT,
};
pub use optim::{global_norm, Adam, AdamConfig};
pub use reinforce::{advantages, surrogate_loss};
pub use rollout::{rollout, Decode, RolloutOutput, StepLogProbs, Trajectory};
pub use train::{
    checkpoint_path, evaluations_tsv, greedy_objectives, metrics_tsv, train, train_step, StepMetrics, TrainConfig,
    TrainOptions, TrainOutcome,
};
