//! Patch extraction, degradation and sample preparation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::codec::{compute_channel_stats, normalize, ChannelStats, FreqMaps, Image, RegionSpec, BLOCK_SIZE};
use crate::error::{invalid, Result};
use crate::pipeline::{degrade, luma_maps, plane_tensor, upscale_ycc, SCALE};
use crate::tensor::Tensor;

/// An aligned pair of HR and bicubic-degraded LR crops.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub lr_patch: Image,
    pub hr_patch: Image,
    pub source: usize,
    /// Top-left corner of the HR crop in the source image.
    pub hr_offset: (usize, usize),
    /// Top-left corner of the LR crop in the (virtual) degraded source.
    pub lr_offset: (usize, usize),
}

/// Random block-aligned HR crops, `cfg.patches_per_image` per source, each
/// paired with its bicubic 1/4 downscale. Sources smaller than a patch are
/// skipped with a warning.
pub fn make_patch_pairs(hr_images: &[Image], cfg: &TrainConfig, seed: u64) -> Result<Vec<PatchPair>> {
    cfg.validate()?;
    let size = cfg.hr_patch;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for (source, img) in hr_images.iter().enumerate() {
        if img.width < size || img.height < size {
            log::warn!("skipping image {source}: {}x{} is smaller than the {size}px patch", img.width, img.height);
            continue;
        }
        let slots_x = (img.width - size) / BLOCK_SIZE + 1;
        let slots_y = (img.height - size) / BLOCK_SIZE + 1;
        for _ in 0..cfg.patches_per_image {
            let x = rng.random_range(0..slots_x) * BLOCK_SIZE;
            let y = rng.random_range(0..slots_y) * BLOCK_SIZE;
            let hr_patch = img.crop(x, y, size, size)?;
            let lr_patch = degrade(&hr_patch)?;
            pairs.push(PatchPair { lr_patch, hr_patch, source, hr_offset: (x, y), lr_offset: (x / SCALE, y / SCALE) });
        }
    }
    Ok(pairs)
}

/// Network-ready views of a patch pair.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Level-shifted upscaled LR luma, `[1, 1, H, W]`.
    pub lr_up: Tensor,
    /// Normalized maps of the upscaled LR luma.
    pub m_lr: FreqMaps,
    /// Normalized maps of the HR luma.
    pub m_hr: FreqMaps,
}

pub fn prepare_sample(pair: &PatchPair, stats: &ChannelStats) -> Result<Sample> {
    prepare_sample_with(pair, stats, stats)
}

/// Like [`prepare_sample`] but normalizing LR and HR maps with separate
/// statistics.
pub fn prepare_sample_with(pair: &PatchPair, lr_stats: &ChannelStats, hr_stats: &ChannelStats) -> Result<Sample> {
    if lr_stats.r != hr_stats.r {
        return Err(invalid!("LR and HR statistics use different region sizes"));
    }
    let region = RegionSpec::new(lr_stats.r)?;
    let up = upscale_ycc(&pair.lr_patch)?;
    if up.width() != pair.hr_patch.width || up.height() != pair.hr_patch.height {
        return Err(invalid!("LR patch does not upscale to the HR patch size"));
    }
    let (m_lr, _) = luma_maps(&up.y, region)?;
    let (m_hr, _) = luma_maps(&pair.hr_patch.luma(), region)?;
    Ok(Sample { lr_up: plane_tensor(&up.y), m_lr: normalize(&m_lr, lr_stats)?, m_hr: normalize(&m_hr, hr_stats)? })
}

/// Statistics of the upscaled-LR maps of a set of patch pairs.
pub fn pair_stats(pairs: &[PatchPair], region: RegionSpec) -> Result<ChannelStats> {
    let maps = pairs
        .iter()
        .map(|p| Ok(luma_maps(&upscale_ycc(&p.lr_patch)?.y, region)?.0))
        .collect::<Result<Vec<_>>>()?;
    compute_channel_stats(&maps)
}

/// Statistics of the upscaled-LR maps of whole images, each center-cropped
/// to the block size and degraded first.
pub fn image_stats(images: &[Image], region: RegionSpec) -> Result<ChannelStats> {
    let maps = images
        .iter()
        .map(|img| {
            let hr = img.center_crop_to_multiple(BLOCK_SIZE)?;
            let up = upscale_ycc(&degrade(&hr)?)?;
            Ok(luma_maps(&up.y, region)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    compute_channel_stats(&maps)
}

/// Deterministic RGB test images: a smooth gradient overlaid with
/// soft-edged rectangles, discs and low-frequency wave patches.
pub fn synthetic_images(count: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_image(&mut rng, size)).collect()
}

fn synthetic_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let s = size as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..200.0));
    let slope: [f64; 2] = std::array::from_fn(|_| rng.random_range(-40.0..40.0));
    let mut px = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let shade = slope[0] * x as f64 / s + slope[1] * y as f64 / s;
            for c in 0..3 {
                px[(y * size + x) * 3 + c] = base[c] + shade;
            }
        }
    }
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let r = rng.random_range(s / 10.0..s / 3.0);
        // Edge ramp width in pixels.
        let soft = rng.random_range(1.5..4.0);
        match rng.random_range(0..3) {
            0 => {
                let hh = rng.random_range(s / 10.0..s / 3.0);
                paint(&mut px, size, color, soft, |x, y| ((x - cx).abs() - r).max((y - cy).abs() - hh), |_, _| 1.0);
            }
            1 => paint(&mut px, size, color, soft, |x, y| (x - cx).hypot(y - cy) - r, |_, _| 1.0),
            _ => {
                let period = rng.random_range(16.0..40.0);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let (dx, dy) = (angle.cos(), angle.sin());
                let wave = move |x: f64, y: f64| 0.5 + 0.5 * (std::f64::consts::TAU * (x * dx + y * dy) / period).sin();
                paint(&mut px, size, color, soft, |x, y| (x - cx).hypot(y - cy) - r, wave);
            }
        }
    }
    px.iter_mut().for_each(|v| *v = v.round().clamp(0.0, 255.0));
    Image::new(size, size, 3, px).expect("synthetic geometry")
}

/// Blends `color` over the image with opacity falling from 1 to 0 across
/// `soft` pixels around the zero level of the signed distance `sd`, scaled
/// by `alpha`.
fn paint(
    px: &mut [f64],
    size: usize,
    color: [f64; 3],
    soft: f64,
    sd: impl Fn(f64, f64) -> f64,
    alpha: impl Fn(f64, f64) -> f64,
) {
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (0.5 - sd(fx, fy) / soft).clamp(0.0, 1.0);
            let a = t * t * (3.0 - 2.0 * t) * alpha(fx, fy);
            if a > 0.0 {
                for (c, col) in color.iter().enumerate() {
                    let v = &mut px[(y * size + x) * 3 + c];
                    *v += a * (col - *v);
                }
            }
        }
    }
}
