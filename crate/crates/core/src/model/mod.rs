//! The two-branch network.
//!
//! * The spatial branch takes the upscaled low-resolution luma plane:
//!   head conv, plain residual groups, deformable residual groups, a stack
//!   of stride-2 convolutions down to block resolution and a 1x1
//!   projection to `R^2` channels.
//! * The frequency branch takes the normalized low-resolution feature maps:
//!   head conv, depth-wise residual groups, plain residual groups, tail conv,
//!   plus a global skip from its input.
//! * The output is `w1 * spatial + w2 * frequency`.

mod config;
mod params;

pub use config::ModelConfig;
pub use params::{init_params, param_layout, BoundParams, Init, ModelParams, ParamSpec};

use crate::error::{invalid, Error, Result};
use crate::tensor::{Graph, Var};

/// Kernel size of every stride-1 convolution except the 1x1 projections.
pub const KERNEL: usize = 3;

/// Kernel size of the stride-2 shrinking convolutions; with padding 1 it
/// halves any even size exactly.
pub const SHRINK_KERNEL: usize = 4;

/// The spatial branch sees level-shifted luma in [-128, 127]; this brings
/// it to roughly unit range before the first convolution.
pub const SEN_INPUT_SCALE: f64 = 1.0 / 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BlockKind {
    /// `x + conv2(lrelu(conv1(x)))`
    Residual,
    /// `x + deform(lrelu(conv1(x)))`, offsets from a conv over the activation
    Deformable,
    /// `x + conv1x1(lrelu(depthwise(x)))`
    Depthwise,
}

pub(crate) fn sen_groups(cfg: &ModelConfig) -> Vec<BlockKind> {
    let mut v = vec![BlockKind::Residual; cfg.sen_rg];
    v.extend(std::iter::repeat_n(BlockKind::Deformable, cfg.sen_drg));
    v
}

pub(crate) fn frn_groups(cfg: &ModelConfig) -> Vec<BlockKind> {
    let mut v = vec![BlockKind::Depthwise; cfg.frn_dwrg];
    v.extend(std::iter::repeat_n(BlockKind::Residual, cfg.frn_rg));
    v
}

fn conv(g: &mut Graph, p: &BoundParams, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    g.conv2d(x, w, b, stride, pad)
}

pub fn residual_block(g: &mut Graph, p: &BoundParams, prefix: &str, kind: BlockKind, x: Var, slope: f64) -> Result<Var> {
    let pad = KERNEL / 2;
    let res = match kind {
        BlockKind::Residual => {
            let h = conv(g, p, &format!("{prefix}.conv1"), x, 1, pad)?;
            let h = g.leaky_relu(h, slope)?;
            conv(g, p, &format!("{prefix}.conv2"), h, 1, pad)?
        }
        BlockKind::Deformable => {
            let h = conv(g, p, &format!("{prefix}.conv1"), x, 1, pad)?;
            let h = g.leaky_relu(h, slope)?;
            let off = conv(g, p, &format!("{prefix}.offset"), h, 1, pad)?;
            let w = p.var(&format!("{prefix}.conv2.w"))?;
            let b = p.var(&format!("{prefix}.conv2.b"))?;
            g.deformable_conv2d(h, w, b, off)?
        }
        BlockKind::Depthwise => {
            let w = p.var(&format!("{prefix}.conv1.w"))?;
            let b = p.var(&format!("{prefix}.conv1.b"))?;
            let h = g.depthwise_conv2d(x, w, b, 1, pad)?;
            let h = g.leaky_relu(h, slope)?;
            conv(g, p, &format!("{prefix}.conv2"), h, 1, 0)?
        }
    };
    if g.value(res).shape() != g.value(x).shape() {
        return Err(Error::Internal(format!(
            "block `{prefix}` changed shape {:?} -> {:?}",
            g.value(x).shape(),
            g.value(res).shape()
        )));
    }
    g.add(x, res)
}

/// `x + tail(block_n(... block_1(x)))`; a group without blocks is the identity.
pub fn residual_group(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    kind: BlockKind,
    blocks: usize,
    x: Var,
    slope: f64,
) -> Result<Var> {
    if blocks == 0 {
        log::debug!("group `{prefix}` has no blocks; passing input through");
        return Ok(x);
    }
    let mut h = x;
    for b in 0..blocks {
        h = residual_block(g, p, &format!("{prefix}.b{b}"), kind, h, slope)?;
    }
    let t = conv(g, p, &format!("{prefix}.tail"), h, 1, KERNEL / 2)?;
    g.add(x, t)
}

/// Spatial branch: `[n, 1, H, W]` to `[n, R^2, H / 2^s, W / 2^s]`.
pub fn sen_forward(g: &mut Graph, p: &BoundParams, x: Var, cfg: &ModelConfig) -> Result<Var> {
    let [_, c, h, w] = g.value(x).dims4()?;
    if c != 1 {
        return Err(invalid!("spatial branch takes one luma channel, got {c}"));
    }
    let f = cfg.shrink_factor();
    if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
        return Err(invalid!("input {h}x{w} is not divisible by {f}"));
    }
    let slope = cfg.leaky_slope;
    let x = g.scale(x, SEN_INPUT_SCALE)?;
    let mut h = conv(g, p, "sen.head", x, 1, KERNEL / 2)?;
    for (i, kind) in sen_groups(cfg).into_iter().enumerate() {
        h = residual_group(g, p, &format!("sen.g{i}"), kind, cfg.blocks_per_group, h, slope)?;
    }
    for s in 0..cfg.shrink_stages {
        h = conv(g, p, &format!("sen.shrink{s}"), h, 2, 1)?;
        h = g.leaky_relu(h, slope)?;
    }
    conv(g, p, "sen.proj", h, 1, 0)
}

/// Frequency branch with global skip: `m + tail(trunk(head(m)))`.
pub fn frn_forward(g: &mut Graph, p: &BoundParams, m: Var, cfg: &ModelConfig) -> Result<Var> {
    let [_, c, _, _] = g.value(m).dims4()?;
    if c != cfg.map_channels() {
        return Err(invalid!("frequency branch takes {} channels, got {c}", cfg.map_channels()));
    }
    let slope = cfg.leaky_slope;
    let mut h = conv(g, p, "frn.head", m, 1, KERNEL / 2)?;
    for (i, kind) in frn_groups(cfg).into_iter().enumerate() {
        h = residual_group(g, p, &format!("frn.g{i}"), kind, cfg.blocks_per_group, h, slope)?;
    }
    let t = conv(g, p, "frn.tail", h, 1, KERNEL / 2)?;
    g.add(m, t)
}

/// `w1 * sen(lr_up) + w2 * frn(m_lr)`.
pub fn freqnet_forward(g: &mut Graph, p: &BoundParams, lr_up: Var, m_lr: Var, cfg: &ModelConfig) -> Result<Var> {
    let [_, _, h, w] = g.value(lr_up).dims4()?;
    let [_, _, hb, wb] = g.value(m_lr).dims4()?;
    if h != hb * crate::codec::BLOCK_SIZE || w != wb * crate::codec::BLOCK_SIZE {
        return Err(invalid!("image {h}x{w} does not match a {hb}x{wb} block grid"));
    }
    let spatial = sen_forward(g, p, lr_up, cfg)?;
    let freq = frn_forward(g, p, m_lr, cfg)?;
    if g.value(spatial).shape() != g.value(freq).shape() {
        return Err(Error::Internal(format!(
            "branch outputs differ: {:?} vs {:?} (shrink_stages = {})",
            g.value(spatial).shape(),
            g.value(freq).shape(),
            cfg.shrink_stages
        )));
    }
    g.weighted_sum(&[spatial, freq], &[cfg.w1, cfg.w2])
}

/// The same network with every deformable group replaced by a plain one
/// sharing its weights (offset branches dropped).
pub fn without_deformable(cfg: &ModelConfig, params: &ModelParams) -> (ModelConfig, ModelParams) {
    let twin_cfg = ModelConfig { sen_rg: cfg.sen_rg + cfg.sen_drg, sen_drg: 0, ..cfg.clone() };
    let twin = ModelParams::from_tensors(
        params.iter().filter(|(k, _)| !k.contains(".offset.")).map(|(k, v)| (k.clone(), v.clone())),
    );
    (twin_cfg, twin)
}
