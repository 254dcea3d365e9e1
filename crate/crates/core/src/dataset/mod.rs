//! Windowing, labelling, train/test splits, balanced sampling and the
//! on-disk window store.

mod npy;
mod prepare;
mod sampler;
mod split;
mod store;
mod window;

pub use npy::{read_npy, write_npy, NpyArray, NpyData};
pub use prepare::{prepare_directory, PatientCounts, Prepared};
pub use sampler::BalancedSampler;
pub use split::{stratified_split, SplitMode, SplitResult};
pub use store::{load_windows, save_windows, DatasetManifest, DATA_FILE, LABELS_FILE, MANIFEST_FILE, PROVENANCE_FILE};
pub use window::{
    label_windows, make_windows, patient_id, windows_from_recording, Dataset, WindowRef, WindowSpec,
};

use crate::eeg_io::EegError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("window spec: {0}")]
    Spec(String),
    #[error("split: {0}")]
    Split(String),
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("npy format: {0}")]
    Format(String),
    #[error(transparent)]
    Eeg(#[from] EegError),
    #[error("io: {0}")]
    Io(String),
}
