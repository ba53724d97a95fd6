//! Direct convolution kernels over NCHW buffers.
//!
//! Work is split across output planes (forward) and across input planes or
//! filters (backward) so every buffer element is written by exactly one task
//! and reductions run in a fixed order.

use rayon::prelude::*;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: [usize; 4], out_c: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let [n, in_c, in_h, in_w] = x;
        if stride == 0 || k == 0 {
            return Err(invalid!("kernel size and stride must be positive"));
        }
        if x.contains(&0) || out_c == 0 {
            return Err(invalid!("empty convolution input {x:?} or filter bank"));
        }
        let span_h = in_h + 2 * pad;
        let span_w = in_w + 2 * pad;
        if span_h < k || span_w < k {
            return Err(invalid!("kernel {k} larger than padded input {span_h}x{span_w}"));
        }
        if !(span_h - k).is_multiple_of(stride) || !(span_w - k).is_multiple_of(stride) {
            return Err(invalid!(
                "output size ({span_h} - {k}) / {stride} + 1 is not integral for input {in_h}x{in_w}"
            ));
        }
        Ok(Self {
            n,
            in_c,
            in_h,
            in_w,
            out_c,
            k,
            stride,
            pad,
            out_h: (span_h - k) / stride + 1,
            out_w: (span_w - k) / stride + 1,
        })
    }

    #[inline]
    fn in_index(&self, o: usize, tap: usize, size: usize) -> Option<usize> {
        let i = (o * self.stride + tap) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < size).then_some(i as usize)
    }

    /// Pairs `(out, in)` along one axis for a kernel tap.
    fn rows(&self, tap: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.out_h).filter_map(move |o| self.in_index(o, tap, self.in_h).map(|i| (o, i)))
    }

    /// Output columns `lo..hi` whose input column for tap `kx` is in range,
    /// and the input column of `lo`.
    fn col_span(&self, kx: usize) -> (usize, usize, usize) {
        let lo = (0..self.out_w).find(|&o| self.in_index(o, kx, self.in_w).is_some());
        let Some(lo) = lo else { return (0, 0, 0) };
        let hi = (lo..self.out_w).take_while(|&o| self.in_index(o, kx, self.in_w).is_some()).count() + lo;
        (lo, hi, lo * self.stride + kx - self.pad)
    }
}

/// `dst[i] += a * src[first + i * stride]` over `dst`.
#[inline]
fn axpy_strided(dst: &mut [f64], a: f64, src: &[f64], first: usize, stride: usize) {
    if stride == 1 {
        let n = dst.len();
        for (d, s) in dst.iter_mut().zip(&src[first..first + n]) {
            *d += a * s;
        }
    } else {
        for (d, s) in dst.iter_mut().zip(src[first..].iter().step_by(stride)) {
            *d += a * s;
        }
    }
}

/// `dst[first + i * stride] += a * src[i]` over `src`.
#[inline]
fn scatter_strided(dst: &mut [f64], a: f64, src: &[f64], first: usize, stride: usize) {
    if stride == 1 {
        for (d, s) in dst[first..first + src.len()].iter_mut().zip(src) {
            *d += a * s;
        }
    } else {
        for (d, s) in dst[first..].iter_mut().step_by(stride).zip(src) {
            *d += a * s;
        }
    }
}

/// `sum_i a[i] * b[first + i * stride]`.
#[inline]
fn dot_strided(a: &[f64], b: &[f64], first: usize, stride: usize) -> f64 {
    if stride == 1 {
        a.iter().zip(&b[first..first + a.len()]).map(|(x, y)| x * y).sum()
    } else {
        a.iter().zip(b[first..].iter().step_by(stride)).map(|(x, y)| x * y).sum()
    }
}

/// Dense cross-correlation. `w` is `[out_c, in_c, k, k]`; when `depthwise`
/// it is `[c, 1, k, k]` and `out_c == in_c`.
pub(crate) fn forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64], depthwise: bool) -> Vec<f64> {
    let (oh, ow, ih, iw, k) = (g.out_h, g.out_w, g.in_h, g.in_w, g.k);
    let mut out = vec![0.0; g.n * g.out_c * oh * ow];
    let spans: Vec<_> = (0..k).map(|kx| g.col_span(kx)).collect();
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, plane)| {
        let (n, o) = (idx / g.out_c, idx % g.out_c);
        plane.fill(b[o]);
        let in_channels: Vec<usize> = if depthwise { vec![o] } else { (0..g.in_c).collect() };
        for (wi, &ic) in in_channels.iter().enumerate() {
            let xin = &x[(n * g.in_c + ic) * ih * iw..][..ih * iw];
            let wbase = if depthwise { o * k * k } else { (o * g.in_c + wi) * k * k };
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[wbase + ky * k + kx];
                    let (lo, hi, first) = spans[kx];
                    for (oy, iy) in g.rows(ky) {
                        let orow = &mut plane[oy * ow + lo..oy * ow + hi];
                        axpy_strided(orow, wv, &xin[iy * iw..(iy + 1) * iw], first, g.stride);
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn backward_input(g: &ConvGeom, w: &[f64], dy: &[f64], depthwise: bool) -> Vec<f64> {
    let (oh, ow, ih, iw, k) = (g.out_h, g.out_w, g.in_h, g.in_w, g.k);
    let mut dx = vec![0.0; g.n * g.in_c * ih * iw];
    let spans: Vec<_> = (0..k).map(|kx| g.col_span(kx)).collect();
    dx.par_chunks_mut(ih * iw).enumerate().for_each(|(idx, plane)| {
        let (n, ic) = (idx / g.in_c, idx % g.in_c);
        let outs: Vec<usize> = if depthwise { vec![ic] } else { (0..g.out_c).collect() };
        for o in outs {
            let dyp = &dy[(n * g.out_c + o) * oh * ow..][..oh * ow];
            let wbase = if depthwise { o * k * k } else { (o * g.in_c + ic) * k * k };
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[wbase + ky * k + kx];
                    let (lo, hi, first) = spans[kx];
                    for (oy, iy) in g.rows(ky) {
                        let drow = &dyp[oy * ow + lo..oy * ow + hi];
                        scatter_strided(&mut plane[iy * iw..(iy + 1) * iw], wv, drow, first, g.stride);
                    }
                }
            }
        }
    });
    dx
}

pub(crate) fn backward_weight(g: &ConvGeom, x: &[f64], dy: &[f64], depthwise: bool) -> Vec<f64> {
    let (oh, ow, ih, iw, k) = (g.out_h, g.out_w, g.in_h, g.in_w, g.k);
    let per_filter = if depthwise { k * k } else { g.in_c * k * k };
    let mut dw = vec![0.0; g.out_c * per_filter];
    let spans: Vec<_> = (0..k).map(|kx| g.col_span(kx)).collect();
    dw.par_chunks_mut(per_filter).enumerate().for_each(|(o, filt)| {
        for n in 0..g.n {
            let dyp = &dy[(n * g.out_c + o) * oh * ow..][..oh * ow];
            let in_channels: Vec<usize> = if depthwise { vec![o] } else { (0..g.in_c).collect() };
            for (wi, &ic) in in_channels.iter().enumerate() {
                let xin = &x[(n * g.in_c + ic) * ih * iw..][..ih * iw];
                for ky in 0..k {
                    for kx in 0..k {
                        let (lo, hi, first) = spans[kx];
                        let mut acc = 0.0;
                        for (oy, iy) in g.rows(ky) {
                            acc += dot_strided(&dyp[oy * ow + lo..oy * ow + hi], &xin[iy * iw..(iy + 1) * iw], first, g.stride);
                        }
                        filt[(wi * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    });
    dw
}

pub(crate) fn backward_bias(n: usize, c: usize, plane: usize, dy: &[f64]) -> Vec<f64> {
    (0..c)
        .map(|o| (0..n).map(|b| dy[(b * c + o) * plane..][..plane].iter().sum::<f64>()).sum())
        .collect()
}
