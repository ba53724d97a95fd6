//! Channel merging: transplant selected frequency channels predicted by the
//! network into the DCT representation of another SR result.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{BlockGrid, FreqMaps, Image, Plane, RegionSpec, YccImage, BLOCK_SIZE};
use crate::error::{invalid, Error, Result};
use crate::loss::{annulus_of, parse_annulus, WeightProfile};
use crate::pipeline::{from_ycc, luma_maps, reconstruct_luma, to_ycc};

/// A set of channel indices in `[0, R^2)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSelection {
    r: usize,
    channels: BTreeSet<usize>,
}

impl ChannelSelection {
    /// Rejects out-of-range and repeated indices.
    pub fn new(r: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut channels = BTreeSet::new();
        for c in indices {
            if c >= r * r {
                return Err(invalid!("channel {c} out of range for R = {r}"));
            }
            if !channels.insert(c) {
                return Err(invalid!("channel {c} selected twice"));
            }
        }
        Ok(Self { r, channels })
    }

    pub fn empty(r: usize) -> Self {
        Self { r, channels: BTreeSet::new() }
    }

    pub fn full(r: usize) -> Self {
        Self { r, channels: (0..r * r).collect() }
    }

    /// All channels of annulus `k` (3 for the core, up to R).
    pub fn annulus(r: usize, k: usize) -> Result<Self> {
        if !(3..=r.max(3)).contains(&k) {
            return Err(invalid!("annulus {k} does not exist for R = {r}"));
        }
        Self::new(r, WeightProfile::annulus_channels(r, k))
    }

    /// Parses a comma-separated list of indices, inclusive index ranges
    /// `a-b` and annulus labels `annulus:k-(k-1)` / `annulus:3`. Terms that
    /// overlap are merged.
    ///
    /// ```
    /// use freqnet::enhance::ChannelSelection;
    /// let s = ChannelSelection::parse("0-8,annulus:6-5,annulus:7-6", 10).unwrap();
    /// // Channels 5 and 6 sit in both the range and the annuli.
    /// assert_eq!(s.len(), 9 + 11 + 13 - 2);
    /// ```
    pub fn parse(text: &str, r: usize) -> Result<Self> {
        let mut indices = BTreeSet::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if let Some(label) = item.strip_prefix("annulus:") {
                let k = parse_annulus(label.trim())?;
                indices.extend(Self::annulus(r, k)?.channels);
            } else if let Some((a, b)) = item.split_once('-') {
                let a: usize = a.trim().parse().map_err(|_| invalid!("bad channel range `{item}`"))?;
                let b: usize = b.trim().parse().map_err(|_| invalid!("bad channel range `{item}`"))?;
                if a > b {
                    return Err(invalid!("empty channel range `{item}`"));
                }
                indices.extend(a..=b);
            } else {
                indices.insert(item.parse().map_err(|_| invalid!("bad channel `{item}`"))?);
            }
        }
        Self::new(r, indices)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn contains(&self, c: usize) -> bool {
        self.channels.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.channels.iter().copied()
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.r != other.r {
            return Err(invalid!("cannot combine selections for R = {} and R = {}", self.r, other.r));
        }
        Ok(Self { r: self.r, channels: self.channels.union(&other.channels).copied().collect() })
    }

    /// Annulus indices touched by the selection.
    pub fn annuli(&self) -> BTreeSet<usize> {
        self.channels.iter().map(|&c| annulus_of(c / self.r, c % self.r)).collect()
    }
}

impl fmt::Display for ChannelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.channels.iter().map(usize::to_string).collect();
        f.write_str(&items.join(","))
    }
}

/// Source of the DCT coefficients outside the `R x R` band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Blocks of the bicubically upscaled LR image, as in network inference.
    #[default]
    Lr,
    /// The SR image's own coefficients, keeping its high-frequency detail.
    Sr,
}

impl FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(Self::Lr),
            "sr" => Ok(Self::Sr),
            _ => Err(invalid!("fill mode must be `lr` or `sr`, got `{s}`")),
        }
    }
}

/// Luma maps and the full block grid of an image with block-aligned sides.
pub fn image_to_maps(img: &Image, region: RegionSpec) -> Result<(FreqMaps, BlockGrid)> {
    if !img.width.is_multiple_of(BLOCK_SIZE) || !img.height.is_multiple_of(BLOCK_SIZE) {
        return Err(invalid!("{}x{} image is not a multiple of {BLOCK_SIZE}", img.width, img.height));
    }
    luma_maps(&img.luma(), region)
}

/// Channel `c` of the result comes from `freqnet` if selected, else from `sr`.
pub fn merge_channels(sr: &FreqMaps, freqnet: &FreqMaps, selection: &ChannelSelection) -> Result<FreqMaps> {
    if !sr.same_shape(freqnet) {
        return Err(invalid!("SR maps and network maps differ in shape"));
    }
    if sr.is_normalized() || freqnet.is_normalized() {
        return Err(invalid!("maps must be denormalized before merging"));
    }
    if selection.r() != sr.region().side() {
        return Err(invalid!("selection for R = {} applied to maps with R = {}", selection.r(), sr.region().side()));
    }
    let mut out = sr.clone();
    for c in selection.iter() {
        out.channel_mut(c).copy_from_slice(freqnet.channel(c));
    }
    Ok(out)
}

/// Writes `maps` into `fill`, inverse transforms, and recombines with the
/// given chroma. Output values are clamped to `[0, 255]`.
pub fn reconstruct_merged(maps: &FreqMaps, fill: &BlockGrid, cb: &Plane, cr: &Plane, channels: usize) -> Result<Image> {
    let y = reconstruct_luma(maps, fill)?;
    from_ycc(&YccImage::new(y, cb.clone(), cr.clone())?, channels)
}

/// One merge request.
#[derive(Debug, Clone)]
pub struct MergeJob {
    pub sr_image: Image,
    /// Denormalized network maps.
    pub freqnet_maps: FreqMaps,
    /// Blocks of the upscaled LR luma.
    pub lr_fill: Option<BlockGrid>,
    pub selection: ChannelSelection,
}

impl MergeJob {
    /// Center-crops an unaligned SR image (with a warning) and checks that
    /// every part agrees in size.
    pub fn new(sr_image: Image, freqnet_maps: FreqMaps, lr_fill: Option<BlockGrid>, selection: ChannelSelection) -> Result<Self> {
        let sr_image = if !sr_image.width.is_multiple_of(BLOCK_SIZE) || !sr_image.height.is_multiple_of(BLOCK_SIZE) {
            let cropped = sr_image.center_crop_to_multiple(BLOCK_SIZE)?;
            log::warn!(
                "SR image {}x{} center-cropped to {}x{}",
                sr_image.width,
                sr_image.height,
                cropped.width,
                cropped.height
            );
            cropped
        } else {
            sr_image
        };
        let (hb, wb) = (sr_image.height / BLOCK_SIZE, sr_image.width / BLOCK_SIZE);
        if (freqnet_maps.hb(), freqnet_maps.wb()) != (hb, wb) {
            return Err(invalid!(
                "network maps cover {}x{} blocks, SR image has {hb}x{wb}",
                freqnet_maps.hb(),
                freqnet_maps.wb()
            ));
        }
        if let Some(fill) = &lr_fill {
            if (fill.rows(), fill.cols()) != (hb, wb) {
                return Err(invalid!("LR fill has {}x{} blocks, SR image has {hb}x{wb}", fill.rows(), fill.cols()));
            }
        }
        Ok(Self { sr_image, freqnet_maps, lr_fill, selection })
    }

    pub fn merged_maps(&self) -> Result<FreqMaps> {
        let (sr_maps, _) = image_to_maps(&self.sr_image, self.freqnet_maps.region())?;
        merge_channels(&sr_maps, &self.freqnet_maps, &self.selection)
    }

    pub fn run(&self, mode: FillMode) -> Result<Image> {
        let (sr_maps, sr_grid) = image_to_maps(&self.sr_image, self.freqnet_maps.region())?;
        let merged = merge_channels(&sr_maps, &self.freqnet_maps, &self.selection)?;
        let fill = match mode {
            FillMode::Sr => &sr_grid,
            FillMode::Lr => self.lr_fill.as_ref().ok_or_else(|| invalid!("LR fill mode needs the LR blocks"))?,
        };
        let ycc = to_ycc(&self.sr_image)?;
        reconstruct_merged(&merged, fill, &ycc.cb, &ycc.cr, self.sr_image.channels)
    }
}
