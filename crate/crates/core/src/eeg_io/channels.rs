use super::{EegError, Recording};
use crate::ndcore::Tensor;

/// The 18 bipolar derivations kept for every recording, in montage order.
pub const BIPOLAR_CHANNELS: [&str; 18] = [
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4", "F4-C4", "C4-P4", "P4-O2",
    "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ", "CZ-PZ",
];

/// Canonical form of a channel label: uppercase, no whitespace, without a
/// trailing `-0`/`-1` duplicate suffix.
pub fn normalize_label(label: &str) -> String {
    let s: String = label.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_uppercase();
    match s.strip_suffix("-0").or_else(|| s.strip_suffix("-1")) {
        Some(base) if base.contains('-') => base.to_string(),
        _ => s,
    }
}

/// Required output channels, in output order.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMap {
    pub labels: Vec<String>,
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self {
            labels: BIPOLAR_CHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Selects and orders rows by `map`. Extra channels are dropped; when
/// several input labels normalise to the same name the first one wins.
pub fn map_channels(rec: &Recording, map: &ChannelMap) -> Result<Recording, EegError> {
    let normalized: Vec<String> = rec.labels.iter().map(|l| normalize_label(l)).collect();
    let mut rows = Vec::with_capacity(map.labels.len());
    let mut missing = Vec::new();
    for want in &map.labels {
        let key = normalize_label(want);
        match normalized.iter().position(|l| *l == key) {
            Some(i) => rows.push(i),
            None => missing.push(want.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(EegError::MissingChannels(missing));
    }
    let n = rec.n_samples();
    let src = rec.data.data();
    let data = rows.iter().flat_map(|&r| src[r * n..(r + 1) * n].iter().copied()).collect();
    Ok(Recording {
        labels: map.labels.clone(),
        sample_rate: rec.sample_rate,
        data: Tensor::new(&[rows.len(), n], data).expect("row count matches"),
        source: rec.source.clone(),
    })
}
