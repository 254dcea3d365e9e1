//! The hybrid network: a convolutional front-end mapping EEG channels to
//! `d_model` features, residual Mamba blocks over the pooled sequence, an
//! optional self-attention layer and a pooled two-layer classifier.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{AttentionConfig, ConvStage, ModelConfig, TemporalKind};
pub use forward::{attention_layer, forward, Forward, Model};
pub use params::{
    count_params, glorot_limit, init_model, AttentionParams, ConvParams, DenseParams, Linear, ModelParams,
    TemporalParams,
};

use crate::ndcore::NdError;
use crate::ssm::SsmError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<SsmError> for ModelError {
    fn from(e: SsmError) -> Self {
        match e {
            SsmError::Nd(e) => ModelError::Nd(e),
            SsmError::Config(m) => ModelError::Config(m),
            SsmError::Contract(m) => ModelError::Nd(NdError::Contract(m)),
        }
    }
}
