//! Bicubic resampling (Keys kernel, a = -0.5) with antialiasing on
//! downscale and symmetric border extension.

use crate::codec::image::{Image, Plane};
use crate::error::{invalid, Result};

const A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        (A + 2.0) * ax3 - (A + 3.0) * ax2 + 1.0
    } else if ax <= 2.0 {
        A * ax3 - 5.0 * A * ax2 + 8.0 * A * ax - 4.0 * A
    } else {
        0.0
    }
}

/// A rational scale factor `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Factor {
    pub num: usize,
    pub den: usize,
}

impl Factor {
    pub const UP4: Factor = Factor { num: 4, den: 1 };
    pub const DOWN4: Factor = Factor { num: 1, den: 4 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(invalid!("scale factor {num}/{den} is not positive"));
        }
        Ok(Self { num, den })
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn apply(self, len: usize) -> Result<usize> {
        if !(len * self.num).is_multiple_of(self.den) {
            return Err(invalid!(
                "length {len} scaled by {}/{} is not integral",
                self.num,
                self.den
            ));
        }
        Ok(len * self.num / self.den)
    }
}

/// Contributions of input samples to one output sample.
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn taps(in_len: usize, out_len: usize, scale: f64) -> Vec<Taps> {
    // Downscaling stretches the kernel so it also acts as a low-pass filter.
    let (stretch, width) = if scale < 1.0 { (scale, 4.0 / scale) } else { (1.0, 4.0) };
    (0..out_len)
        .map(|j| {
            let center = (j as f64 + 0.5) / scale - 0.5;
            let first = (center - width / 2.0).floor() as isize;
            let count = width.ceil() as isize + 2;
            let mut index = Vec::with_capacity(count as usize);
            let mut weight = Vec::with_capacity(count as usize);
            for i in first..first + count {
                let w = stretch * cubic(stretch * (center - i as f64));
                if w != 0.0 {
                    index.push(mirror(i, in_len));
                    weight.push(w);
                }
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

/// Resamples a plane by `factor` in both dimensions.
pub fn bicubic_resize(plane: &Plane, factor: Factor) -> Result<Plane> {
    let out_w = factor.apply(plane.width)?;
    let out_h = factor.apply(plane.height)?;
    let scale = factor.value();

    let col_taps = taps(plane.width, out_w, scale);
    let mut horizontal = vec![0.0; out_w * plane.height];
    for y in 0..plane.height {
        let row = &plane.data[y * plane.width..(y + 1) * plane.width];
        for (x, t) in col_taps.iter().enumerate() {
            horizontal[y * out_w + x] = t.index.iter().zip(&t.weight).map(|(&i, &w)| w * row[i]).sum();
        }
    }

    let row_taps = taps(plane.height, out_h, scale);
    let mut data = vec![0.0; out_w * out_h];
    for (y, t) in row_taps.iter().enumerate() {
        for x in 0..out_w {
            data[y * out_w + x] =
                t.index.iter().zip(&t.weight).map(|(&i, &w)| w * horizontal[i * out_w + x]).sum();
        }
    }
    Ok(Plane { width: out_w, height: out_h, data })
}

/// Resizes every channel of an image independently.
pub fn resize_image(img: &Image, factor: Factor) -> Result<Image> {
    let planes = (0..img.channels)
        .map(|c| bicubic_resize(&img.plane(c), factor))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(&planes)
}
