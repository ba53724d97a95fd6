//! Deformable convolution (v1): stride 1, "same" zero padding, every kernel
//! tap displaced by a learned `(dy, dx)` pair per output location.
//!
//! Offsets are laid out `[n, 2 * k * k, h, w]`, channel `2t` holding the
//! vertical and `2t + 1` the horizontal displacement of tap `t = ky * k + kx`.
//! Samples are read bilinearly; anything outside the input reads as zero.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub(crate) struct DeformGeom {
    pub n: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl DeformGeom {
    fn taps(&self) -> usize {
        self.k * self.k
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Calls `f(p, py, px)` with the sampling position of tap `t` for every
    /// output pixel `p` of batch item `n`.
    #[inline]
    fn for_each_position(&self, off: &[f64], n: usize, t: usize, mut f: impl FnMut(usize, f64, f64)) {
        let hw = self.hw();
        let half = (self.k / 2) as f64;
        let (ky, kx) = ((t / self.k) as f64, (t % self.k) as f64);
        let base = (n * 2 * self.taps() + 2 * t) * hw;
        let (offy, offx) = (&off[base..base + hw], &off[base + hw..base + 2 * hw]);
        for oy in 0..self.h {
            let y = oy as f64 - half + ky;
            for ox in 0..self.w {
                let p = oy * self.w + ox;
                f(p, y + offy[p], ox as f64 - half + kx + offx[p]);
            }
        }
    }
}

/// The four bilinear corners of a sampling position. Corners outside the
/// input get index 0 and mask 0, so they read and receive zero.
struct Bilinear {
    idx: [usize; 4],
    mask: [f64; 4],
    ly: f64,
    lx: f64,
}

impl Bilinear {
    #[inline]
    fn new(h: usize, w: usize, py: f64, px: f64) -> Self {
        let (fy, fx) = (py.floor(), px.floor());
        let (y0, x0) = (fy as i64, fx as i64);
        let (h, w) = (h as i64, w as i64);
        let mut idx = [0; 4];
        let mut mask = [0.0; 4];
        for (i, (y, x)) in [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)].into_iter().enumerate() {
            if y >= 0 && x >= 0 && y < h && x < w {
                idx[i] = (y * w + x) as usize;
                mask[i] = 1.0;
            }
        }
        Self { idx, mask, ly: py - fy, lx: px - fx }
    }

    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (ly, lx, m) = (self.ly, self.lx, self.mask);
        [(1.0 - ly) * (1.0 - lx) * m[0], (1.0 - ly) * lx * m[1], ly * (1.0 - lx) * m[2], ly * lx * m[3]]
    }

    #[inline]
    fn sample(&self, plane: &[f64]) -> f64 {
        let wt = self.weights();
        (0..4).map(|i| wt[i] * plane[self.idx[i]]).sum()
    }

    /// Partial derivatives of the sample with respect to `(py, px)`.
    #[inline]
    fn grad(&self, plane: &[f64]) -> (f64, f64) {
        let v: [f64; 4] = std::array::from_fn(|i| self.mask[i] * plane[self.idx[i]]);
        let (ly, lx) = (self.ly, self.lx);
        ((1.0 - lx) * (v[2] - v[0]) + lx * (v[3] - v[1]), (1.0 - ly) * (v[1] - v[0]) + ly * (v[3] - v[2]))
    }
}

/// Sampled columns `[in_c * taps, h * w]` for one batch item.
fn columns(g: &DeformGeom, x: &[f64], off: &[f64], n: usize) -> Vec<f64> {
    let (hw, taps) = (g.hw(), g.taps());
    let mut col = vec![0.0; g.in_c * taps * hw];
    col.par_chunks_mut(hw).enumerate().for_each(|(row, out)| {
        let (ic, t) = (row / taps, row % taps);
        let plane = &x[(n * g.in_c + ic) * hw..][..hw];
        g.for_each_position(off, n, t, |p, py, px| out[p] = Bilinear::new(g.h, g.w, py, px).sample(plane));
    });
    col
}

pub(crate) fn forward(g: &DeformGeom, x: &[f64], w: &[f64], b: &[f64], off: &[f64]) -> Vec<f64> {
    let (hw, rows) = (g.hw(), g.in_c * g.taps());
    let mut out = vec![0.0; g.n * g.out_c * hw];
    for n in 0..g.n {
        let col = columns(g, x, off, n);
        out[n * g.out_c * hw..(n + 1) * g.out_c * hw].par_chunks_mut(hw).enumerate().for_each(|(o, plane)| {
            plane.fill(b[o]);
            for r in 0..rows {
                let wv = w[o * rows + r];
                for (dst, &c) in plane.iter_mut().zip(&col[r * hw..(r + 1) * hw]) {
                    *dst += wv * c;
                }
            }
        });
    }
    out
}

pub(crate) struct DeformGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub doff: Vec<f64>,
}

pub(crate) fn backward(g: &DeformGeom, x: &[f64], w: &[f64], off: &[f64], dy: &[f64]) -> DeformGrads {
    let (hw, taps) = (g.hw(), g.taps());
    let rows = g.in_c * taps;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut doff = vec![0.0; off.len()];

    for n in 0..g.n {
        let col = columns(g, x, off, n);
        let dyn_ = &dy[n * g.out_c * hw..(n + 1) * g.out_c * hw];

        dw.par_chunks_mut(rows).enumerate().for_each(|(o, filt)| {
            let dyp = &dyn_[o * hw..(o + 1) * hw];
            for (r, acc) in filt.iter_mut().enumerate() {
                *acc += dyp.iter().zip(&col[r * hw..(r + 1) * hw]).map(|(a, b)| a * b).sum::<f64>();
            }
        });

        let mut dcol = vec![0.0; rows * hw];
        dcol.par_chunks_mut(hw).enumerate().for_each(|(r, out)| {
            for o in 0..g.out_c {
                let wv = w[o * rows + r];
                for (d, &gy) in out.iter_mut().zip(&dyn_[o * hw..(o + 1) * hw]) {
                    *d += wv * gy;
                }
            }
        });

        dx[n * g.in_c * hw..(n + 1) * g.in_c * hw].par_chunks_mut(hw).enumerate().for_each(|(ic, plane)| {
            for t in 0..taps {
                let dc = &dcol[(ic * taps + t) * hw..][..hw];
                g.for_each_position(off, n, t, |p, py, px| {
                    let b = Bilinear::new(g.h, g.w, py, px);
                    for (&i, wt) in b.idx.iter().zip(b.weights()) {
                        plane[i] += wt * dc[p];
                    }
                });
            }
        });

        doff[n * 2 * taps * hw..(n + 1) * 2 * taps * hw].par_chunks_mut(2 * hw).enumerate().for_each(|(t, pair)| {
            let (dpy, dpx) = pair.split_at_mut(hw);
            for ic in 0..g.in_c {
                let plane = &x[(n * g.in_c + ic) * hw..][..hw];
                let dc = &dcol[(ic * taps + t) * hw..][..hw];
                g.for_each_position(off, n, t, |p, py, px| {
                    let (gy, gx) = Bilinear::new(g.h, g.w, py, px).grad(plane);
                    dpy[p] += dc[p] * gy;
                    dpx[p] += dc[p] * gx;
                });
            }
        });
    }
    DeformGrads { dx, dw, doff }
}
