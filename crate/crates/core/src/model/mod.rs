//! The routing policy: node and vehicle encoders, the pair scorer, parameters
//! and checkpoints.

mod checkpoint;
mod config;
mod params;
mod policy;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_VERSION,
};
pub use config::{EdgeFeatures, ModelConfig};
pub use params::{Bound, Init, Layout, ParameterSet, RunningStats};
pub use policy::{
    action_probabilities, apply_mask, edge_features, greedy_index, node_attributes, node_key_mask, pair_logits,
    pfca_update, vehicle_attributes, NodeContext, NodeEncoding, Policy, VEHICLE_FEATURES,
};
