use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::ssm::{MambaConfig, ScanKind};

/// One convolutional stage: conv (stride 1, same padding) → batch norm →
/// SiLU → max-pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub enabled: bool,
    pub heads: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            heads: 2,
        }
    }
}

/// Temporal block stacked after the convolutional front-end.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalKind {
    #[default]
    Mamba,
    /// Per-timestep two-layer MLP of comparable width; timing baseline only.
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub window_len: usize,
    pub d_model: usize,
    pub mamba: MambaConfig,
    pub n_mamba_layers: usize,
    pub attention: AttentionConfig,
    pub conv_stack: Vec<ConvStage>,
    pub fc_hidden: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub temporal: TemporalKind,
    /// Scan used by eval-mode forwards; training always uses the taped
    /// sequential scan.
    pub eval_scan: ScanKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 18,
            window_len: 2048,
            d_model: 16,
            mamba: MambaConfig::default(),
            n_mamba_layers: 1,
            attention: AttentionConfig::default(),
            conv_stack: vec![
                ConvStage {
                    out_channels: 32,
                    kernel: 7,
                    pool: 4,
                },
                ConvStage {
                    out_channels: 16,
                    kernel: 5,
                    pool: 4,
                },
            ],
            fc_hidden: 32,
            dropout_p: 0.5,
            n_classes: 2,
            temporal: TemporalKind::Mamba,
            eval_scan: ScanKind::Sequential,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by gradient checks and the synthetic task:
    /// 64-sample windows, `d_model = d_state = 4`.
    pub fn reduced() -> Self {
        Self {
            window_len: 64,
            d_model: 4,
            mamba: MambaConfig {
                d_model: 4,
                d_state: 4,
                d_conv: 4,
                expand: 2,
            },
            conv_stack: vec![
                ConvStage {
                    out_channels: 8,
                    kernel: 5,
                    pool: 2,
                },
                ConvStage {
                    out_channels: 4,
                    kernel: 3,
                    pool: 2,
                },
            ],
            fc_hidden: 8,
            ..Self::default()
        }
    }

    /// Sequence length reaching the temporal blocks.
    pub fn pooled_len(&self) -> usize {
        self.conv_stack.iter().fold(self.window_len, |l, s| l / s.pool.max(1))
    }

    /// Channel count reaching the temporal blocks.
    pub fn feature_channels(&self) -> usize {
        self.conv_stack.last().map_or(self.in_channels, |s| s.out_channels)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.in_channels == 0 || self.window_len == 0 || self.d_model == 0 {
            return bad("channel count, window length and d_model must be positive".into());
        }
        if self.mamba.d_model != self.d_model {
            return bad(format!(
                "mamba.d_model ({}) must equal d_model ({})",
                self.mamba.d_model, self.d_model
            ));
        }
        self.mamba.validate()?;
        if self.feature_channels() != self.d_model {
            return bad(format!(
                "last conv stage produces {} channels, d_model is {}",
                self.feature_channels(),
                self.d_model
            ));
        }
        if self.conv_stack.iter().any(|s| s.kernel == 0 || s.pool == 0 || s.out_channels == 0) {
            return bad("conv stages need positive channels, kernel and pool".into());
        }
        if self.pooled_len() == 0 {
            return bad(format!("window of {} samples pools down to nothing", self.window_len));
        }
        if self.attention.enabled && (self.attention.heads == 0 || !self.d_model.is_multiple_of(self.attention.heads)) {
            return bad(format!(
                "{} attention heads do not divide d_model {}",
                self.attention.heads, self.d_model
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout probability {} outside [0, 1)", self.dropout_p));
        }
        if self.n_classes < 2 || self.fc_hidden == 0 {
            return bad("need at least two classes and a non-empty hidden layer".into());
        }
        Ok(())
    }
}
