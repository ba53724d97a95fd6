use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Network hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_channels: usize,
    /// Residual blocks per group.
    pub blocks_per_group: usize,
    /// Plain residual groups in the spatial branch, run first.
    pub sen_rg: usize,
    /// Deformable residual groups in the spatial branch, after the plain ones.
    pub sen_drg: usize,
    /// Depth-wise residual groups in the frequency branch, run first.
    pub frn_dwrg: usize,
    /// Plain residual groups in the frequency branch, after the depth-wise ones.
    pub frn_rg: usize,
    /// Stride-2 convolutions reducing the spatial branch to block resolution.
    pub shrink_stages: usize,
    pub w1: f64,
    pub w2: f64,
    pub leaky_slope: f64,
    pub region: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_channels: 64,
            blocks_per_group: 10,
            sen_rg: 7,
            sen_drg: 3,
            frn_dwrg: 3,
            frn_rg: 7,
            shrink_stages: 5,
            w1: 0.5,
            w2: 0.5,
            leaky_slope: 0.2,
            region: 10,
        }
    }
}

impl ModelConfig {
    /// Four feature channels, one block per group and one group of every kind.
    pub fn micro() -> Self {
        Self { feature_channels: 4, blocks_per_group: 1, sen_rg: 1, sen_drg: 1, frn_dwrg: 1, frn_rg: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_channels == 0 {
            return Err(invalid!("feature_channels must be positive"));
        }
        if self.shrink_stages == 0 {
            return Err(invalid!("shrink_stages must be at least 1"));
        }
        if !(self.w1 + self.w2 > 0.0) || !self.w1.is_finite() || !self.w2.is_finite() {
            return Err(invalid!("combine weights must be finite with a positive sum"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(invalid!("leaky slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if self.region == 0 {
            return Err(invalid!("region must be positive"));
        }
        Ok(())
    }

    pub fn map_channels(&self) -> usize {
        self.region * self.region
    }

    /// Spatial reduction factor of the shrinking trunk.
    pub fn shrink_factor(&self) -> usize {
        1 << self.shrink_stages
    }
}
