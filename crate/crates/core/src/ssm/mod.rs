//! Selective state-space (Mamba) block.
//!
//! The recurrence, per batch element `b` and inner channel `d`, is
//!
//! ```text
//! Ā[t,n] = exp(Δ[t,d]·A[d,n])          B̄[t,n] = Δ[t,d]·B[t,n]
//! h[t,n] = Ā[t,n]·h[t−1,n] + B̄[t,n]·u[t,d]
//! y[t,d] = Σₙ C[t,n]·h[t,n] + D[d]·u[t,d]
//! ```
//!
//! with `A = −softplus(A_log)` so every `Ā` lies in `(0, 1]`.

mod block;
mod config;
mod init;
mod scan;

pub use block::{mamba_block_forward, MambaBlock, ScanKind};
pub use config::MambaConfig;
pub use init::{init_mamba, MambaParams, DT_BIAS_TARGET, DT_WEIGHT_SCALE};
pub use scan::{
    blelloch_inclusive_scan, discretize, scan_seq_raw, selective_scan_par, selective_scan_seq,
    selective_scan_taped, ScanInputs,
};

use crate::ndcore::NdError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsmError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
