//! Graph anomaly detectors that score users and expose latent embeddings:
//! a supervised GCN classifier and an unsupervised graph autoencoder.

mod autoencoder;
mod gcn;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{Tape, Tensor, Var};

pub use autoencoder::{autoencoder_forward, autoencoder_tape, structure_target, AutoencoderVars};
pub use gcn::{bce_loss, gcn_forward, gcn_tape, GcnVars};
pub use train::{
    detector_forward, detector_objective, init_detector, train_detector, train_detector_with_features, ObjectiveVars,
    Supervision, TrainedDetector,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorVariant {
    GcnSupervised,
    AutoencoderUnsupervised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub variant: DetectorVariant,
    /// Weight of the structure term in the autoencoder score.
    pub alpha: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            n_layers: 2,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            epochs: 100,
            variant: DetectorVariant::GcnSupervised,
            alpha: 0.8,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 1 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.n_layers < 2 {
            return Err(Error::Config(format!("n_layers must be at least 2, got {}", self.n_layers)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning_rate must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorOutput {
    /// Per-user suspiciousness in `[0, 1]`.
    pub suspiciousness: Vec<f64>,
    /// User rows of the representation layer, `m × d`.
    pub embeddings: Tensor,
    /// The same layer for every node, `(m + n) × d`.
    pub node_embeddings: Tensor,
}

/// How a detector multiplies by the normalized adjacency on a tape.
#[derive(Clone)]
pub enum Propagation {
    Fixed(Arc<NormalizedAdjacency>),
    /// `adj` must already include `block`'s current values; gradients reach
    /// `block` through the normalization.
    Augmented { adj: Arc<NormalizedAdjacency>, users: Arc<Vec<usize>>, block: Var },
}

impl Propagation {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Propagation::Fixed(adj) => tape.propagate(adj, x),
            Propagation::Augmented { adj, users, block } => tape.propagate_augmented(adj, users, *block, x),
        }
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        match self {
            Propagation::Fixed(adj) | Propagation::Augmented { adj, .. } => adj,
        }
    }
}

/// Min-max scaling to `[0, 1]`; constant scores map to 0.5.
pub fn suspiciousness_from_scores(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

pub(crate) fn layer_name(prefix: &str, i: usize) -> String {
    format!("{prefix}.w{i}")
}
