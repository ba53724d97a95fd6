//! Whole-image evaluation and dataset losses.

use super::Sample;
use crate::codec::{normalize, ChannelStats, Image, RegionSpec, BLOCK_SIZE};
use crate::error::{invalid, Result};
use crate::loss::{freq_loss, frm, psnr_y, CharbonnierParams, MetricsRecord, MetricsReport, WeightProfile};
use crate::model::{freqnet_forward, ModelConfig, ModelParams};
use crate::pipeline::{degrade, infer, luma_maps, maps_tensor, tensor_maps};
use crate::tensor::Graph;

/// Statistics and loss settings shared by every evaluated image.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub stats: ChannelStats,
    pub stats_id: String,
    pub weights: WeightProfile,
    pub charbonnier: CharbonnierParams,
}

impl EvalContext {
    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.stats.r != cfg.region || self.weights.r != cfg.region {
            return Err(invalid!(
                "stats (R = {}) and weights (R = {}) must match the model (R = {})",
                self.stats.r,
                self.weights.r,
                cfg.region
            ));
        }
        Ok(())
    }
}

/// Crops `hr` to the block size, degrades it, runs the network and scores
/// the result. Returns the record and the super-resolved image.
pub fn evaluate_image(
    params: &ModelParams,
    cfg: &ModelConfig,
    ctx: &EvalContext,
    name: &str,
    hr: &Image,
) -> Result<(MetricsRecord, Image)> {
    ctx.check(cfg)?;
    let hr = hr.center_crop_to_multiple(BLOCK_SIZE)?;
    let lr = degrade(&hr)?;
    let out = infer(params, cfg, &ctx.stats, &lr)?;
    let (m_hr, _) = luma_maps(&hr.luma(), RegionSpec::new(cfg.region)?)?;
    let l = freq_loss(&out.maps_sr, &normalize(&m_hr, &ctx.stats)?, &ctx.weights, ctx.charbonnier)?;
    let psnr = psnr_y(&out.image, &hr)?;
    let record = MetricsRecord {
        image: name.to_string(),
        psnr_y_db: psnr.is_finite().then_some(psnr),
        frm: frm(l)?,
        l_freq: l,
        epsilon: ctx.charbonnier.epsilon,
        weight_profile_id: ctx.weights.id.clone(),
        r: cfg.region,
        stats_id: ctx.stats_id.clone(),
    };
    Ok((record, out.image))
}

/// One record per image plus the aggregate.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, ctx: &EvalContext, images: &[(String, Image)]) -> Result<MetricsReport> {
    let records = images
        .iter()
        .map(|(name, img)| Ok(evaluate_image(params, cfg, ctx, name, img)?.0))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_records(records)
}

/// Mean L_freq of the network over prepared samples.
pub fn samples_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    samples: &[Sample],
    weights: &WeightProfile,
    p: CharbonnierParams,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("no samples to score"));
    }
    let mut total = 0.0;
    for s in samples {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let x = g.constant(s.lr_up.clone());
        let m = g.constant(maps_tensor(&s.m_lr));
        let out = freqnet_forward(&mut g, &bound, x, m, cfg)?;
        let sr = tensor_maps(g.value(out), 0, &s.m_lr, true)?;
        total += freq_loss(&sr, &s.m_hr, weights, p)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean L_freq of the identity predictor (output = LR maps).
pub fn identity_baseline_loss(samples: &[Sample], weights: &WeightProfile, p: CharbonnierParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("no samples to score"));
    }
    let total = samples.iter().map(|s| freq_loss(&s.m_lr, &s.m_hr, weights, p)).sum::<Result<f64>>()?;
    Ok(total / samples.len() as f64)
}
