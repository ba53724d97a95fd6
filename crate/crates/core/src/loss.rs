//! Frequency-weighted Charbonnier loss, the FRM and PSNR-Y metrics, and the
//! residual statistics used to decide per-channel loss weights.

use serde::{Deserialize, Serialize};

use crate::codec::{inverse_dct_block, BlockGrid, FreqMaps, Image, RegionSpec};
use crate::error::{invalid, Result};

/// Weights for annuli `3, 4-3, 5-4, ..., 10-9` at `R = 10`.
pub const TABLE1_WEIGHTS: [f64; 8] = [1.0, 1.0, 5.0, 10.0, 10.0, 5.0, 1.0, 1.0];

/// Number of nested regions examined by [`region_residual_profile`].
pub const PROFILE_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharbonnierParams {
    pub epsilon: f64,
}

impl Default for CharbonnierParams {
    fn default() -> Self {
        Self { epsilon: 1e-3 }
    }
}

impl CharbonnierParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(invalid!("Charbonnier epsilon must be positive, got {epsilon}"));
        }
        Ok(Self { epsilon })
    }
}

pub fn charbonnier(x1: f64, x2: f64, p: CharbonnierParams) -> f64 {
    let d = x1 - x2;
    (d * d + p.epsilon * p.epsilon).sqrt()
}

/// Annulus index of block coordinate `(u, v)`: `max(u, v) + 1`, with the
/// whole 3x3 core collapsed into annulus 3.
pub fn annulus_of(u: usize, v: usize) -> usize {
    (u.max(v) + 1).max(3)
}

/// Human label of an annulus: `"3"` for the core, `"k-(k-1)"` otherwise.
pub fn annulus_label(k: usize) -> String {
    if k <= 3 {
        "3".to_string()
    } else {
        format!("{}-{}", k, k - 1)
    }
}

/// Parses `"3"` or `"k-(k-1)"` back into an annulus index.
pub fn parse_annulus(label: &str) -> Result<usize> {
    if label == "3" {
        return Ok(3);
    }
    let (hi, lo) = label.split_once('-').ok_or_else(|| invalid!("bad annulus label `{label}`"))?;
    let hi: usize = hi.trim().parse().map_err(|_| invalid!("bad annulus label `{label}`"))?;
    let lo: usize = lo.trim().parse().map_err(|_| invalid!("bad annulus label `{label}`"))?;
    if hi < 4 || lo + 1 != hi {
        return Err(invalid!("bad annulus label `{label}`"));
    }
    Ok(hi)
}

/// Per-channel loss weights, constant on each annulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub id: String,
    pub r: usize,
    pub betas: Vec<f64>,
    /// `(label, weight)` for annuli 3, 4-3, ..., R-(R-1).
    pub annulus_table: Vec<(String, f64)>,
}

impl WeightProfile {
    /// Builds a profile from one weight per annulus (`R - 2` values).
    pub fn from_annulus_weights(id: &str, r: usize, weights: &[f64]) -> Result<Self> {
        if r < 3 {
            return Err(invalid!("annulus weights need R >= 3, got {r}"));
        }
        if weights.len() != r - 2 {
            return Err(invalid!("R = {r} needs {} annulus weights, got {}", r - 2, weights.len()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(invalid!("annulus weights must be positive"));
        }
        let region = RegionSpec::new(r)?;
        let betas = (0..region.channels())
            .map(|c| {
                let (u, v) = region.coord(c);
                weights[annulus_of(u, v) - 3]
            })
            .collect();
        let annulus_table = (3..=r).map(|k| (annulus_label(k), weights[k - 3])).collect();
        Ok(Self { id: id.to_string(), r, betas, annulus_table })
    }

    pub fn uniform(r: usize) -> Self {
        Self { id: "uniform".into(), r, betas: vec![1.0; r * r], annulus_table: vec![] }
    }

    pub fn beta(&self, u: usize, v: usize) -> f64 {
        self.betas[u * self.r + v]
    }

    /// Channel indices belonging to annulus `k`.
    pub fn annulus_channels(r: usize, k: usize) -> Vec<usize> {
        (0..r * r).filter(|&c| annulus_of(c / r, c % r) == k).collect()
    }
}

/// The weight allocation shipped with the method, defined for `R = 10`.
pub fn table1_weights(r: usize) -> Result<WeightProfile> {
    if r != 10 {
        return Err(invalid!("the reference weight table is defined for R = 10, got {r}; supply a custom table"));
    }
    WeightProfile::from_annulus_weights("table1", r, &TABLE1_WEIGHTS)
}

/// `1/(R^2 Hb Wb) sum_c beta_c sum_xy charbonnier(sr, hr)`.
pub fn freq_loss(sr: &FreqMaps, hr: &FreqMaps, w: &WeightProfile, p: CharbonnierParams) -> Result<f64> {
    if !sr.same_shape(hr) {
        return Err(invalid!("loss operands differ in shape"));
    }
    if sr.is_normalized() != hr.is_normalized() {
        return Err(invalid!("loss operands differ in normalization state"));
    }
    if w.betas.len() != sr.channels() {
        return Err(invalid!("{} weights for {} channels", w.betas.len(), sr.channels()));
    }
    let mut total = 0.0;
    for (c, beta) in w.betas.iter().enumerate() {
        let s: f64 = sr.channel(c).iter().zip(hr.channel(c)).map(|(&a, &b)| charbonnier(a, b, p)).sum();
        total += beta * s;
    }
    Ok(total / (sr.channels() * sr.hb() * sr.wb()) as f64)
}

/// Frequency reconstruction metric, `-10 log10(l)`.
pub fn frm(l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(invalid!("FRM needs a positive loss, got {l}"));
    }
    Ok(-10.0 * l.log10())
}

/// PSNR in dB over the luma plane with peak 255. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr_y(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(invalid!("PSNR operands differ in size: {}x{} vs {}x{}", a.width, a.height, b.width, b.height));
    }
    let (ya, yb) = (a.luma(), b.luma());
    let mse = ya.data.iter().zip(&yb.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ya.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Mean residual between HR and upscaled-LR reconstructions under growing
/// region selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProfile {
    /// `res[i-1]` uses the top-left `(i + 2) x (i + 2)` region.
    pub res: Vec<f64>,
    /// `v[i-1] = res_i - res_{i-1}` with `res_0 = 0`.
    pub v: Vec<f64>,
    pub sample_count: usize,
}

pub fn region_residual_profile<'a>(
    pairs: impl IntoIterator<Item = (&'a BlockGrid, &'a BlockGrid)>,
) -> Result<ResidualProfile> {
    let mut sums = [0.0; PROFILE_STEPS];
    let mut blocks = 0usize;
    let mut samples = 0usize;
    for (hr, lr) in pairs {
        if hr.rows() != lr.rows() || hr.cols() != lr.cols() || hr.block_size() != lr.block_size() {
            return Err(invalid!("HR and LR block grids are not aligned"));
        }
        if hr.block_size() < PROFILE_STEPS + 2 {
            return Err(invalid!("blocks of size {} are smaller than the largest region", hr.block_size()));
        }
        samples += 1;
        for (bh, bl) in hr.blocks().iter().zip(lr.blocks()) {
            blocks += 1;
            for (i, sum) in sums.iter_mut().enumerate() {
                let keep = i + 3;
                let ph = inverse_dct_block(&bh.truncated(keep));
                let pl = inverse_dct_block(&bl.truncated(keep));
                let n = ph.as_slice().len() as f64;
                *sum += ph.as_slice().iter().zip(pl.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            }
        }
    }
    if blocks == 0 {
        return Err(invalid!("residual profile needs at least one block pair"));
    }
    let res: Vec<f64> = sums.iter().map(|s| s / blocks as f64).collect();
    let v = res.iter().enumerate().map(|(i, r)| r - if i == 0 { 0.0 } else { res[i - 1] }).collect();
    Ok(ResidualProfile { res, v, sample_count: samples })
}

/// One row of a metrics report. A PSNR of `None` stands for identical
/// images (infinite PSNR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub image: String,
    pub psnr_y_db: Option<f64>,
    pub frm: f64,
    pub l_freq: f64,
    pub epsilon: f64,
    pub weight_profile_id: String,
    pub r: usize,
    pub stats_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: Vec<MetricsRecord>,
    pub aggregate: MetricsRecord,
}

impl MetricsReport {
    /// Averages the per-image records; infinite PSNRs are excluded from
    /// the PSNR mean.
    pub fn from_records(images: Vec<MetricsRecord>) -> Result<Self> {
        let first = images.first().ok_or_else(|| invalid!("empty metrics report"))?;
        let n = images.len() as f64;
        let finite: Vec<f64> = images.iter().filter_map(|r| r.psnr_y_db).collect();
        let aggregate = MetricsRecord {
            image: "aggregate".into(),
            psnr_y_db: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            frm: images.iter().map(|r| r.frm).sum::<f64>() / n,
            l_freq: images.iter().map(|r| r.l_freq).sum::<f64>() / n,
            epsilon: first.epsilon,
            weight_profile_id: first.weight_profile_id.clone(),
            r: first.r,
            stats_id: first.stats_id.clone(),
        };
        Ok(Self { images, aggregate })
    }
}
