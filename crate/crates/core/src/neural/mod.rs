//! A small recurrent-network core in 64-bit floats: LSTM and dense layers,
//! inverted dropout, MSE/MAE/temporal-smoothness losses, backpropagation
//! through time, Adam, checkpoints and finite-difference gradient checks.

mod adam;
mod checkpoint;
mod dense;
mod dropout;
mod gradcheck;
mod loss;
mod lstm;
mod net;
mod tensor;
mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use dense::{Activation, DenseLayer};
pub use dropout::{dropout_apply, Mode};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPS};
pub use loss::{mae, mse, temporal_smoothness, LossKind, LossSpec, LossTerm};
pub use lstm::{lstm_forward, LstmCache, LstmLayer};
pub use net::{dropout_mask, BranchSpec, NetSpec, Normalization, ParamBlock, Scaler, SeqSample, SequenceModel};
pub use tensor::Tensor;
pub use train::{evaluate_loss, fit_normalization, train, EpochStats, LossWeights, TrainConfig};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize },
    #[error("model produced a non-finite output")]
    NonFiniteOutput,
    #[error("no training samples")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[cfg(test)]
mod tests;
