use std::path::Path;

use anyhow::{Context, Result};
use convmambanet::dataset::{SplitMode, WindowSpec};
use convmambanet::eeg_io::BIPOLAR_CHANNELS;
use convmambanet::model::ModelConfig;
use convmambanet::train::{AdamConfig, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: t.adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitMode,
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            mode: SplitMode::default(),
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Synthetic windows per timed epoch.
    pub n_windows: usize,
    pub batch_size: usize,
    pub repetitions: usize,
    /// Base length `L` of the scan timing; `2L` is timed alongside.
    pub scan_len: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            n_windows: 64,
            batch_size: 32,
            repetitions: 3,
            scan_len: 1 << 14,
        }
    }
}

/// Every knob of a run. Serialized as `run_config.toml` into each output
/// directory so that the run can be repeated from its artifacts alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub channels: Vec<String>,
    pub window: WindowSpec,
    pub split: SplitSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    /// `channels` and `window_len` always follow the model.
    pub synth: SynthSpec,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            channels: BIPOLAR_CHANNELS.iter().map(|s| s.to_string()).collect(),
            window: WindowSpec::default(),
            split: SplitSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            synth: SynthSpec::default(),
            bench: BenchSection::default(),
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults (with the reduced model when `reduced`), overlaid key by key
    /// with the TOML text.
    pub fn layered(text: Option<&str>, reduced: bool) -> Result<Self> {
        let mut base = RunConfig::default();
        if reduced {
            base.model = ModelConfig::reduced();
        }
        let Some(text) = text else {
            return Ok(base);
        };
        let overlay: toml::Value = toml::from_str(text).context("config is not valid TOML")?;
        let mut value = toml::Value::try_from(&base)?;
        merge(&mut value, overlay);
        value.try_into().context("config does not match the run schema")
    }

    pub fn load(path: Option<&Path>, reduced: bool) -> Result<Self> {
        let text = path
            .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
            .transpose()?;
        Self::layered(text.as_deref(), reduced)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            adam: self.train.adam,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            channels: self.model.in_channels,
            window_len: self.model.window_len,
            ..self.synth
        }
    }
}
