//! Orchestration of augmenter and detector: the iterative scheme that
//! alternates fresh augmenters and fresh detectors, and the end-to-end
//! scheme that trains both jointly through relaxed decoding.

mod e2e;
mod itr;

use serde::{Deserialize, Serialize};

use crate::augmenter::AugmenterConfig;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};

pub use e2e::{e2e_objective, run_eland_e2e, E2eModel, E2eOutcome, E2eVars};
pub use itr::{run_eland_itr, ItrOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItrConfig {
    pub iterations: usize,
    pub kappa: usize,
    pub detector: DetectorConfig,
    pub augmenter: AugmenterConfig,
    /// Return the iteration with the best validation AUC instead of the last.
    pub select_best_by_validation: bool,
    pub seed: u64,
}

impl Default for ItrConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            kappa: 150,
            detector: DetectorConfig::default(),
            augmenter: AugmenterConfig::default(),
            select_best_by_validation: false,
            seed: 0,
        }
    }
}

impl ItrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        self.detector.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct E2eConfig {
    pub n_epochs: usize,
    /// Total preferential-attachment budget spread over all users.
    pub gamma: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub detector: DetectorConfig,
    /// Augmenter width and optimizer settings; `epochs` is unused.
    pub augmenter: AugmenterConfig,
    pub seed: u64,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            n_epochs: 200,
            gamma: 100,
            tau_start: 5.0,
            tau_end: 0.5,
            detector: DetectorConfig::default(),
            augmenter: AugmenterConfig::default(),
            seed: 0,
        }
    }
}

impl E2eConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_epochs < 1 {
            return Err(Error::Config("n_epochs must be at least 1".into()));
        }
        if !(self.tau_end > 0.0 && self.tau_start >= self.tau_end) {
            return Err(Error::Config(format!(
                "need tau_start >= tau_end > 0, got {} and {}",
                self.tau_start, self.tau_end
            )));
        }
        self.detector.validate()
    }
}

/// Linear temperature schedule from `tau_start` at epoch 0 to `tau_end` at
/// the last epoch.
pub fn anneal_tau(epoch: usize, n_epochs: usize, tau_start: f64, tau_end: f64) -> Result<f64> {
    if epoch >= n_epochs {
        return Err(Error::Parameter(format!("epoch {epoch} outside [0, {n_epochs})")));
    }
    if n_epochs == 1 {
        return Ok(tau_start);
    }
    Ok(tau_start + (tau_end - tau_start) * epoch as f64 / (n_epochs - 1) as f64)
}
