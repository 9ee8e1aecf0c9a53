//! Graph-transformer encoder, autoregressive decoder, heads, loss and training.

mod checkpoint;
pub mod gradcheck;
mod network;
mod optim;
pub mod tape;
mod train;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, SVCK_MAGIC, SVCK_VERSION};
pub use network::{
    positional_encoding, GraphInput, LossValues, Model, ModelConfig, Outputs, ATOM_FEATURES, BOND_CLASSES,
};
pub use optim::AdamW;
pub use train::{
    train, train_step, type_accuracy, BatchSource, Example, FixedSource, LrSchedule, SampledSource, TrainOptions,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint does not fit: {0}")]
    ConfigMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("io: {0}")]
    Io(String),
    #[error("training data: {0}")]
    Data(String),
}

impl Model {
    /// Checks that a loaded model fits a template set.
    pub fn check_reactions(&self, n_reaction_types: usize) -> Result<(), ModelError> {
        if self.config.n_reaction_types != n_reaction_types {
            return Err(ModelError::ConfigMismatch(format!(
                "model has {} reaction types, template set has {n_reaction_types}",
                self.config.n_reaction_types
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
