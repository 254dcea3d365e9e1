//! Optimisation, the training loop, evaluation metrics and timing benches.

mod adam;
mod bench;
mod fit;
mod gradcheck;
mod metrics;
mod plot;
mod synth;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use bench::{bench_epoch, scan_linearity, summary_csv, time_scan, timings_csv, ScanScaling, Timing};
pub use gradcheck::{model_suite, op_suite, GRAD_TOLERANCE};
pub use fit::{evaluate, train, EpochRow, Evaluation, TrainConfig, TrainLog, TrainRun};
pub use metrics::{auc, compute_metrics, roc_csv, roc_points, trapezoid_area, ClassMetrics, MetricsReport, RocPoint};
pub use plot::{line_plot, Series};
pub use synth::{synth_dataset, SynthSpec};

use crate::dataset::DatasetError;
use crate::model::ModelError;
use crate::ndcore::NdError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl From<NdError> for TrainError {
    fn from(e: NdError) -> Self {
        TrainError::Model(ModelError::Nd(e))
    }
}
