//! The optimization loop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, clip_global_norm, Checkpoint, LossKind, OptimizerState, Sample, TrainConfig};
use crate::codec::ChannelStats;
use crate::error::{invalid, Error, Result};
use crate::loss::frm;
use crate::model::{freqnet_forward, ModelConfig, ModelParams};
use crate::pipeline::maps_tensor;
use crate::tensor::{Graph, Tensor};

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub lr: f64,
    /// Weighted Charbonnier loss of the batch before the update.
    pub l_freq: f64,
    pub frm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub log: Vec<LogRecord>,
}

/// Runs `cfg.iterations` optimizer steps starting from `params` and
/// `optimizer` (a fresh state starts at iteration 0; a restored one
/// resumes its schedule).
///
/// Samples are visited in a per-epoch shuffled order; the learning rate
/// follows the cosine schedule over epochs. When `checkpoint_dir` is given,
/// a checkpoint is written every `cfg.checkpoint_every` iterations and at
/// the end. A non-finite loss aborts the run without touching the last
/// checkpoint on disk.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    samples: &[Sample],
    stats: &ChannelStats,
    mut params: ModelParams,
    mut optimizer: OptimizerState,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    params.validate(model_cfg)?;
    if samples.is_empty() {
        return Err(invalid!("training needs at least one sample"));
    }
    if stats.r != model_cfg.region {
        return Err(invalid!("stats for R = {} used with a model for R = {}", stats.r, model_cfg.region));
    }
    let profile = cfg.weights.profile(model_cfg.region)?;
    let eps = cfg.charbonnier()?.epsilon;

    let per_epoch = samples.len().div_ceil(cfg.batch_size);
    let mut log = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = usize::MAX;

    for _ in 0..cfg.iterations {
        let iter = optimizer.step as usize;
        let epoch = iter / per_epoch;
        if epoch != order_epoch {
            order = (0..samples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            order_epoch = epoch;
        }
        let slot = iter % per_epoch;
        let batch: Vec<&Sample> =
            order[slot * cfg.batch_size..((slot + 1) * cfg.batch_size).min(samples.len())].iter().map(|&i| &samples[i]).collect();
        let lr = cfg.coslr.at_epoch(epoch)?;

        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let x = g.constant(Tensor::stack_batch(&batch.iter().map(|s| s.lr_up.clone()).collect::<Vec<_>>())?);
        let m = g.constant(Tensor::stack_batch(&batch.iter().map(|s| maps_tensor(&s.m_lr)).collect::<Vec<_>>())?);
        let target = Tensor::stack_batch(&batch.iter().map(|s| maps_tensor(&s.m_hr)).collect::<Vec<_>>())?;
        let out = freqnet_forward(&mut g, &bound, x, m, model_cfg)?;
        let freq = g.weighted_charbonnier(out, &target, &profile.betas, eps)?;
        let objective = match cfg.loss {
            LossKind::Freq => freq,
            LossKind::Mse => g.mse(out, &target)?,
        };
        let l_freq = g.value(freq).item()?;
        if !g.value(objective).item()?.is_finite() || !l_freq.is_finite() {
            return Err(Error::NonFinite { name: "loss".into(), step: iter as u64 + 1 });
        }
        g.backward(objective)?;
        let mut grads: BTreeMap<String, Tensor> =
            bound.iter().filter_map(|(k, &v)| g.grad(v).map(|t| (k.clone(), t.clone()))).collect();
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        adam_step(&mut params, &grads, &mut optimizer, lr, &cfg.adam)?;

        let done = optimizer.step;
        if done.is_multiple_of(cfg.log_every as u64) || done == 1 {
            let rec = LogRecord { iter: done, lr, l_freq, frm: frm(l_freq)? };
            log::info!("iter {} lr {:.3e} l_freq {:.6e} frm {:.3}", rec.iter, rec.lr, rec.l_freq, rec.frm);
            log.push(rec);
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every as u64) {
                snapshot(dir, model_cfg, cfg, stats, &params, &optimizer)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        snapshot(dir, model_cfg, cfg, stats, &params, &optimizer)?;
    }
    Ok(TrainOutcome { params, optimizer, log })
}

fn snapshot(
    dir: &Path,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    stats: &ChannelStats,
    params: &ModelParams,
    optimizer: &OptimizerState,
) -> Result<()> {
    Checkpoint {
        model: model_cfg.clone(),
        params: params.clone(),
        optimizer: optimizer.clone(),
        train: cfg.clone(),
        stats: Some(stats.clone()),
    }
    .save(dir)
}
