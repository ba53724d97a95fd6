//! Raster images, real-valued planes and the JPEG-style color transform.

use std::path::Path;

use crate::error::{invalid, Result};

/// Value subtracted from every plane to zero-center 8-bit data.
pub const LEVEL_SHIFT: f64 = 128.0;

// BT.601 luma weights (full range, as used by JFIF).
const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

/// A single real-valued channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid!(
                "plane data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("plane contains non-finite values"));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(invalid!(
                "crop {}x{}+{}+{} exceeds plane {}x{}",
                width,
                height,
                x0,
                y0,
                self.width,
                self.height
            ));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(Self { width, height, data })
    }
}

/// An RGB (3 channels) or grayscale (1 channel) image with interleaved
/// intensities on the [0, 255] scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid!("images have 1 or 3 channels, got {channels}"));
        }
        if width == 0 || height == 0 {
            return Err(invalid!("empty image"));
        }
        if data.len() != width * height * channels {
            return Err(invalid!(
                "image data has {} values, expected {}",
                data.len(),
                width * height * channels
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("image contains non-finite values"));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| invalid!("no planes"))?;
        if planes.iter().any(|p| p.width != first.width || p.height != first.height) {
            return Err(invalid!("planes differ in size"));
        }
        let n = first.width * first.height;
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        Self::new(first.width, first.height, planes.len(), data)
    }

    pub fn plane(&self, channel: usize) -> Plane {
        let data = self.data.iter().skip(channel).step_by(self.channels).copied().collect();
        Plane { width: self.width, height: self.height, data }
    }

    /// Rounds to integer levels and clamps to [0, 255], as storing to an
    /// 8-bit file would. Values within [`TIE_SLACK`] below a half level
    /// round up, so results that differ only by float noise agree.
    pub fn quantized(&self) -> Self {
        let data = self.data.iter().map(|v| (v + TIE_SLACK).round().clamp(0.0, 255.0)).collect();
        Self { data, ..*self }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        let planes = (0..self.channels)
            .map(|c| self.plane(c).crop(x0, y0, width, height))
            .collect::<Result<Vec<_>>>()?;
        Self::from_planes(&planes)
    }

    /// Center-crops both dimensions down to the largest multiple of `multiple`.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<Self> {
        let w = self.width / multiple * multiple;
        let h = self.height / multiple * multiple;
        if w == 0 || h == 0 {
            return Err(invalid!(
                "image {}x{} is smaller than {multiple} pixels",
                self.width,
                self.height
            ));
        }
        if w == self.width && h == self.height {
            return Ok(self.clone());
        }
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    /// Zero-centered luma plane. Grayscale images are their own luma.
    pub fn luma(&self) -> Plane {
        match self.channels {
            1 => self.plane(0).map(|v| v - LEVEL_SHIFT),
            _ => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|px| KR * px[0] + KG * px[1] + KB * px[2] - LEVEL_SHIFT)
                    .collect();
                Plane { width: self.width, height: self.height, data }
            }
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, data): (usize, Vec<f64>) = match img.color() {
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16 => {
                (1, img.to_luma8().into_raw().into_iter().map(f64::from).collect())
            }
            _ => (3, img.to_rgb8().into_raw().into_iter().map(f64::from).collect()),
        };
        Self::new(width, height, channels, data)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.quantized().data.iter().map(|&v| v as u8).collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer(path.as_ref(), &bytes, self.width as u32, self.height as u32, color)?;
        Ok(())
    }
}

/// Slack added before rounding to integer levels. Upscaled 8-bit input often
/// lands exactly on half levels.
pub const TIE_SLACK: f64 = 1e-9;

/// Zero-centered YCbCr planes.
#[derive(Debug, Clone, PartialEq)]
pub struct YccImage {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
    pub level_shift: f64,
}

impl YccImage {
    pub fn new(y: Plane, cb: Plane, cr: Plane) -> Result<Self> {
        let same = |p: &Plane| p.width == y.width && p.height == y.height;
        if !same(&cb) || !same(&cr) {
            return Err(invalid!("YCbCr planes differ in size"));
        }
        Ok(Self { y, cb, cr, level_shift: LEVEL_SHIFT })
    }

    pub fn width(&self) -> usize {
        self.y.width
    }

    pub fn height(&self) -> usize {
        self.y.height
    }
}

/// Full-range BT.601 RGB to YCbCr, every plane shifted by -128.
pub fn rgb_to_ycc(img: &Image) -> Result<YccImage> {
    if img.channels != 3 {
        return Err(invalid!("rgb_to_ycc needs 3 channels, got {}", img.channels));
    }
    let n = img.width * img.height;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let luma = KR * r + KG * g + KB * b;
        y.push(luma - LEVEL_SHIFT);
        // Chroma is already centered on zero once the +128 offset is dropped.
        cb.push((b - luma) / (2.0 * (1.0 - KB)));
        cr.push((r - luma) / (2.0 * (1.0 - KR)));
    }
    let plane = |data| Plane { width: img.width, height: img.height, data };
    YccImage::new(plane(y), plane(cb), plane(cr))
}

/// Exact inverse of [`rgb_to_ycc`], clamped to [0, 255].
pub fn ycc_to_rgb(ycc: &YccImage) -> Result<Image> {
    let (w, h) = (ycc.width(), ycc.height());
    if ycc.cb.width != w || ycc.cb.height != h || ycc.cr.width != w || ycc.cr.height != h {
        return Err(invalid!("YCbCr planes differ in size"));
    }
    let mut data = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let luma = ycc.y.data[i] + ycc.level_shift;
        let r = luma + 2.0 * (1.0 - KR) * ycc.cr.data[i];
        let b = luma + 2.0 * (1.0 - KB) * ycc.cb.data[i];
        let g = (luma - KR * r - KB * b) / KG;
        data.extend([r, g, b].map(|v| v.clamp(0.0, 255.0)));
    }
    Image::new(w, h, 3, data)
}
