//! End-to-end glue between images, feature maps and the network.

use crate::codec::{
    blocks_to_plane, denormalize, maps_to_blocks, normalize, plane_to_blocks, reform_to_maps, resize_image, rgb_to_ycc,
    ycc_to_rgb, bicubic_resize, BlockGrid, ChannelStats, Factor, FreqMaps, Image, Plane, RegionSpec, YccImage,
    BLOCK_SIZE, LEVEL_SHIFT,
};
use crate::error::{invalid, Result};
use crate::model::{freqnet_forward, ModelConfig, ModelParams};
use crate::tensor::{Graph, Tensor};

/// Super-resolution factor of the pipeline.
pub const SCALE: usize = 4;

/// Bicubic 1/4 downscale, rounded to 8-bit levels.
pub fn degrade(hr: &Image) -> Result<Image> {
    Ok(resize_image(hr, Factor::DOWN4)?.quantized())
}

/// Zero-centered YCbCr; grayscale images get zero chroma.
pub fn to_ycc(img: &Image) -> Result<YccImage> {
    match img.channels {
        3 => rgb_to_ycc(img),
        _ => {
            let y = img.luma();
            let zero = Plane::filled(img.width, img.height, 0.0);
            YccImage::new(y, zero.clone(), zero)
        }
    }
}

/// Inverse of [`to_ycc`] producing an image with `channels` channels.
pub fn from_ycc(ycc: &YccImage, channels: usize) -> Result<Image> {
    match channels {
        3 => ycc_to_rgb(ycc),
        1 => {
            let y = ycc.y.map(|v| (v + LEVEL_SHIFT).clamp(0.0, 255.0));
            Image::from_planes(&[y])
        }
        c => Err(invalid!("cannot build an image with {c} channels")),
    }
}

/// Bicubic 4x upscale of every YCbCr plane.
pub fn upscale_ycc(lr: &Image) -> Result<YccImage> {
    let ycc = to_ycc(lr)?;
    YccImage::new(
        bicubic_resize(&ycc.y, Factor::UP4)?,
        bicubic_resize(&ycc.cb, Factor::UP4)?,
        bicubic_resize(&ycc.cr, Factor::UP4)?,
    )
}

/// The plain bicubic result, assembled in YCbCr like the network output.
pub fn bicubic_baseline(lr: &Image) -> Result<Image> {
    from_ycc(&upscale_ycc(lr)?, lr.channels)
}

/// Unnormalized maps of a luma plane plus the full block grid they came from.
pub fn luma_maps(y: &Plane, region: RegionSpec) -> Result<(FreqMaps, BlockGrid)> {
    let grid = plane_to_blocks(y, BLOCK_SIZE)?;
    Ok((reform_to_maps(&grid, region)?, grid))
}

/// Two-stage inverse: write maps into the fill blocks, then inverse DCT.
pub fn reconstruct_luma(maps: &FreqMaps, fill: &BlockGrid) -> Result<Plane> {
    Ok(blocks_to_plane(&maps_to_blocks(maps, fill)?))
}

pub fn maps_tensor(maps: &FreqMaps) -> Tensor {
    Tensor::new(&[1, maps.channels(), maps.hb(), maps.wb()], maps.data().to_vec()).expect("maps geometry")
}

pub fn plane_tensor(p: &Plane) -> Tensor {
    Tensor::new(&[1, 1, p.height, p.width], p.data.clone()).expect("plane geometry")
}

/// Batch item `index` of a `[n, R^2, Hb, Wb]` tensor as maps shaped like `like`.
pub fn tensor_maps(t: &Tensor, index: usize, like: &FreqMaps, normalized: bool) -> Result<FreqMaps> {
    let n = like.data().len();
    let data = t.data().get(index * n..(index + 1) * n).ok_or_else(|| invalid!("batch index {index} out of range"))?;
    like.with_data(data.to_vec(), normalized)
}

/// Everything produced by one forward pass over an image.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Reconstructed super-resolved image.
    pub image: Image,
    /// Predicted maps, normalized.
    pub maps_sr: FreqMaps,
    /// Low-resolution input maps, normalized.
    pub maps_lr: FreqMaps,
    /// Blocks of the upscaled low-resolution luma (stage-1 fill).
    pub lr_grid: BlockGrid,
}

/// Runs the network on a low-resolution image whose upscaled size is a
/// multiple of the block size.
pub fn infer(params: &ModelParams, cfg: &ModelConfig, stats: &ChannelStats, lr: &Image) -> Result<Inference> {
    let region = RegionSpec::new(cfg.region)?;
    let up = upscale_ycc(lr)?;
    let (maps, lr_grid) = luma_maps(&up.y, region)?;
    let maps_lr = normalize(&maps, stats)?;

    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(plane_tensor(&up.y));
    let m = g.constant(maps_tensor(&maps_lr));
    let out = freqnet_forward(&mut g, &bound, x, m, cfg)?;
    let maps_sr = tensor_maps(g.value(out), 0, &maps_lr, true)?;

    let y = reconstruct_luma(&denormalize(&maps_sr, stats)?, &lr_grid)?;
    let image = from_ycc(&YccImage::new(y, up.cb, up.cr)?, lr.channels)?;
    Ok(Inference { image, maps_sr, maps_lr, lr_grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip() {
        let img = Image::new(2, 1, 1, vec![10.0, 250.0]).unwrap();
        assert_eq!(from_ycc(&to_ycc(&img).unwrap(), 1).unwrap(), img);
    }

    #[test]
    fn degrade_dims() {
        let img = Image::new(64, 32, 3, vec![100.0; 64 * 32 * 3]).unwrap();
        let lr = degrade(&img).unwrap();
        assert_eq!((lr.width, lr.height, lr.channels), (16, 8, 3));
        assert!(lr.data.iter().all(|&v| v == 100.0));
    }
}
