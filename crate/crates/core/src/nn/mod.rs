//! A fully connected regression network written from scratch.
//!
//! Each hidden layer runs affine -> batch norm -> ReLU -> inverted dropout; the
//! output layer is a single affine unit. Training is plain mini-batch gradient
//! descent on the mean squared error of z-scored targets.

mod layers;
mod network;
pub mod persist;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layers::{
    batchnorm_backward, batchnorm_forward, dropout, relu, BatchNormCache, BatchNormOutput, Mode,
};
pub use network::{
    init_network, mse_loss, BatchNorm, Dense, DropoutMasks, Gradients, HiddenLayer,
    NetworkParams, TrainPass,
};
pub use train::{predict, train, train_with_progress, write_loss_curves, TrainReport};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("batch norm in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("loss inputs: {0}")]
    Loss(String),
    #[error("labels have zero variance")]
    ZeroVarianceLabels,
    #[error("label {index} is not finite")]
    NonFiniteLabel { index: usize },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("training stopped after {completed} of {total} iterations")]
    Cancelled { completed: usize, total: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub const DEFAULT_PR_ITERATIONS: usize = 170;
pub const DEFAULT_PRV_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dims: [usize; 3],
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Full passes over the shuffled training set.
    pub iterations: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: crate::features::FEATURES,
            hidden_dims: [256, 128, 64],
            dropout_rate: 0.30,
            learning_rate: 0.01,
            batch_size: 64,
            iterations: DEFAULT_PR_ITERATIONS,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(NnError::Config(m.to_string()));
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return fail("batch_size and iterations must be positive");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_momentum must lie in [0, 1]");
        }
        if !(self.bn_epsilon.is_finite() && self.bn_epsilon > 0.0) {
            return fail("bn_epsilon must be positive");
        }
        Ok(())
    }

    /// Layer widths from input to the scalar output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend_from_slice(&self.hidden_dims);
        d.push(1);
        d
    }
}
