//! Patch preparation, optimization, checkpoints and evaluation.

mod checkpoint;
mod data;
mod eval;
mod optim;
mod run;

use serde::{Deserialize, Serialize};

use crate::codec::BLOCK_SIZE;
use crate::error::{invalid, Result};
use crate::loss::{table1_weights, CharbonnierParams, WeightProfile};

pub use checkpoint::Checkpoint;
pub use data::{
    image_stats, make_patch_pairs, pair_stats, prepare_sample, prepare_sample_with, synthetic_images, PatchPair, Sample,
};
pub use eval::{evaluate, evaluate_image, identity_baseline_loss, samples_loss, EvalContext};
pub use optim::{adam_step, clip_global_norm, cos_lr, AdamConfig, CosLrConfig, OptimizerState};
pub use run::{train, LogRecord, TrainOutcome};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Channel-weighted Charbonnier loss on normalized maps.
    Freq,
    /// Plain mean squared error on normalized maps.
    Mse,
}

/// Where the per-channel loss weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum WeightSpec {
    Table1,
    Uniform,
    /// One weight per annulus, `R - 2` values.
    Annulus { id: String, weights: Vec<f64> },
}

impl WeightSpec {
    pub fn profile(&self, r: usize) -> Result<WeightProfile> {
        match self {
            WeightSpec::Table1 => table1_weights(r),
            WeightSpec::Uniform => Ok(WeightProfile::uniform(r)),
            WeightSpec::Annulus { id, weights } => WeightProfile::from_annulus_weights(id, r, weights),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// HR patch side in pixels.
    pub hr_patch: usize,
    pub scale: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub patches_per_image: usize,
    pub adam: AdamConfig,
    pub coslr: CosLrConfig,
    pub seed: u64,
    pub epsilon: f64,
    pub weights: WeightSpec,
    pub loss: LossKind,
    /// Checkpoint cadence in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Logging cadence in iterations.
    pub log_every: usize,
    /// Optional global gradient-norm bound.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hr_patch: 64,
            scale: crate::pipeline::SCALE,
            batch_size: 8,
            iterations: 1000,
            patches_per_image: 4,
            adam: AdamConfig::default(),
            coslr: CosLrConfig::default(),
            seed: 0,
            epsilon: CharbonnierParams::default().epsilon,
            weights: WeightSpec::Table1,
            loss: LossKind::Freq,
            checkpoint_every: 100,
            log_every: 10,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hr_patch == 0 || !self.hr_patch.is_multiple_of(BLOCK_SIZE) {
            return Err(invalid!("hr_patch must be a positive multiple of {BLOCK_SIZE}, got {}", self.hr_patch));
        }
        if self.scale != crate::pipeline::SCALE {
            return Err(invalid!("only x{} is supported, got x{}", crate::pipeline::SCALE, self.scale));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(invalid!("batch_size and log_every must be positive"));
        }
        if !(self.coslr.eta_max >= self.coslr.eta_min && self.coslr.eta_min >= 0.0) || self.coslr.period_epochs == 0 {
            return Err(invalid!("learning-rate schedule needs eta_max >= eta_min >= 0 and a positive period"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(invalid!("grad_clip must be positive"));
            }
        }
        CharbonnierParams::new(self.epsilon)?;
        Ok(())
    }

    pub fn charbonnier(&self) -> Result<CharbonnierParams> {
        CharbonnierParams::new(self.epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { hr_patch: 48, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { scale: 2, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { grad_clip: Some(0.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn config_json_partial() {
        let c: TrainConfig = serde_json::from_str(r#"{"iterations": 5, "weights": {"kind": "uniform"}}"#).unwrap();
        assert_eq!(c.iterations, 5);
        assert_eq!(c.weights, WeightSpec::Uniform);
        assert_eq!(c.batch_size, 8);
    }
}
