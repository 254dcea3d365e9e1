//! ConvMambaNet: a convolutional front-end feeding selective state-space
//! (Mamba) blocks, trained end to end to flag seizures in windowed scalp EEG.
//!
//! The crate is organised bottom-up:
//!
//! - [`ndcore`]: tensors, reverse-mode tape, finite-difference oracle.
//! - [`ssm`]: selective scan (sequential and work-efficient parallel) and the
//!   Mamba block.
//! - [`model`]: the hybrid network, its initialisation and checkpoints.
//! - [`eeg_io`]: EDF files, seizure summaries, bipolar channel selection.
//! - [`dataset`]: windowing, labelling, splits, balanced sampling, NPY I/O.
//! - [`train`]: Adam, the training loop, metrics, ROC and timing benches.

#[macro_use]
mod macros;

pub mod dataset;
pub mod eeg_io;
pub mod model;
pub mod ndcore;
mod params;
pub mod ssm;
pub mod train;

pub use ndcore::{Mode, Rng, Tape, Tensor, Var};
