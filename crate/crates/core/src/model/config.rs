use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How each node's distance profile is turned into edge features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EdgeFeatures {
    /// The `k` smallest distances to other nodes, ascending. Independent of
    /// problem size and of customer order.
    KnnSorted { k: usize },
    /// The full distance row including the zero self-distance; fixes the node
    /// count at `nodes`.
    FullRow { nodes: usize },
}

impl EdgeFeatures {
    pub fn width(&self) -> usize {
        match *self {
            EdgeFeatures::KnnSorted { k } => k,
            EdgeFeatures::FullRow { nodes } => nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub logit_clip: f64,
    pub edge_features: EdgeFeatures,
    /// Fuse edge features into node embeddings through gated cross-attention.
    pub dual_modality: bool,
    /// Inject the previously selected vehicle into node embeddings.
    pub pfca: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            heads: 8,
            encoder_layers: 3,
            logit_clip: 10.0,
            edge_features: EdgeFeatures::KnnSorted { k: 16 },
            dual_modality: true,
            pfca: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn with_dims(embed_dim: usize, encoder_layers: usize, edge_features: EdgeFeatures) -> Self {
        ModelConfig {
            embed_dim,
            encoder_layers,
            edge_features,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads != 8 {
            return Err(Error::Config(format!("head count is fixed at 8, got {}", self.heads)));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding size {} must be a positive multiple of {}",
                self.embed_dim, self.heads
            )));
        }
        if self.edge_features.width() == 0 {
            return Err(Error::Config("edge feature width must be positive".into()));
        }
        if !(self.logit_clip.is_finite() && self.logit_clip > 0.0) {
            return Err(Error::Config("logit clip must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || self.bn_eps < 0.0 {
            return Err(Error::Config("invalid batch-norm settings".into()));
        }
        Ok(())
    }

    /// Checks that instances with `n_customers` customers can be encoded.
    pub fn check_instance_size(&self, n_customers: usize) -> Result<()> {
        match self.edge_features {
            EdgeFeatures::KnnSorted { k } if k > n_customers => Err(Error::Config(format!(
                "knn edge features need k = {k} <= number of customers {n_customers}"
            ))),
            EdgeFeatures::FullRow { nodes } if nodes != n_customers + 1 => Err(Error::Config(format!(
                "full-row edge features were configured for {nodes} nodes, instance has {}",
                n_customers + 1
            ))),
            _ => Ok(()),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}
