//! EDF recordings, seizure annotations and bipolar channel selection.

mod channels;
mod edf;
mod summary;

pub use channels::{map_channels, normalize_label, ChannelMap, BIPOLAR_CHANNELS};
pub use edf::{fixture_edf, parse_edf, physical_scale, read_edf, write_edf, Edf, EdfHeader, Recording, SignalHeader};
pub use summary::{parse_summary, read_annotation_csv, write_annotation_csv, SeizureInterval, SummaryEntry};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EegError {
    #[error("file of {len} bytes is shorter than the 256-byte EDF header")]
    Short { len: usize },
    #[error("byte {offset}: field `{field}` holds {value:?}")]
    Field {
        offset: usize,
        field: &'static str,
        value: String,
    },
    #[error("byte {offset}: header declares {declared} bytes, {signals} signals need {expected}")]
    HeaderBytes {
        offset: usize,
        declared: usize,
        signals: usize,
        expected: usize,
    },
    #[error("byte {offset}: data record {record} truncated, needs {needed} bytes, {available} left")]
    Truncated {
        offset: usize,
        record: usize,
        needed: usize,
        available: usize,
    },
    #[error("byte {offset}: {extra} bytes after the last declared data record")]
    Trailing { offset: usize, extra: usize },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("signal {signal}: sample {value} outside digital range [{min}, {max}]")]
    Range {
        signal: usize,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("line {line}: {message}")]
    Summary { line: usize, message: String },
    #[error("annotation csv: {0}")]
    Csv(String),
    #[error("missing required channels: {}", .0.join(", "))]
    MissingChannels(Vec<String>),
    #[error("io: {0}")]
    Io(String),
}
