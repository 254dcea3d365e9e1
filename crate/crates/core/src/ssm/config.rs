use serde::{Deserialize, Serialize};

use super::SsmError;

/// Shape hyperparameters of one Mamba block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
}

impl Default for MambaConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            d_state: 16,
            d_conv: 4,
            expand: 2,
        }
    }
}

impl MambaConfig {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Rank of the Δ projection, `ceil(d_model / 16)`.
    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16)
    }

    pub fn validate(&self) -> Result<(), SsmError> {
        if self.d_model == 0 || self.d_state == 0 || self.d_conv == 0 || self.expand == 0 {
            return Err(SsmError::Config(format!("all block sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_block_algorithm() {
        let c = MambaConfig::default();
        assert_eq!((c.d_model, c.d_state, c.d_conv, c.expand), (16, 16, 4, 2));
        assert_eq!(c.d_inner(), 32);
        assert_eq!(c.dt_rank(), 1);
        assert_eq!(MambaConfig { d_model: 17, ..c }.dt_rank(), 2);
        assert!(MambaConfig { d_state: 0, ..c }.validate().is_err());
    }
}
