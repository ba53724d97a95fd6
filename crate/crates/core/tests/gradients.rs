//! Tape gradients against central differences, and convolution forwards
//! against plain nested loops.

mod common;

use common::{block_params, check, project, rand_tensor, SEEDS, TOL};
use freqnet::model::{residual_block, BlockKind, BoundParams};
use freqnet::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize, depthwise: bool) -> Tensor {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [oc, ic, k, _] = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * oc * oh * ow];
    for bi in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.data()[o];
                    for i in 0..ic {
                        let src = if depthwise { o } else { i };
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as i64 - pad as i64;
                                let xx = (ox * stride + kx) as i64 - pad as i64;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    s += x.data()[((bi * c + src) * h + y as usize) * wd + xx as usize]
                                        * w.data()[((o * ic + i) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[((bi * oc + o) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    Tensor::new(&[n, oc, oh, ow], out).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_forward_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let k = [1, 3, 4][rng.random_range(0..3)];
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..=k / 2);
        // Output sizes must come out integral.
        let fit = |m: usize| k + stride * m - 2 * pad;
        let (h, w) = (fit(rng.random_range(1..5)), fit(rng.random_range(1..5)));
        let (n, ic, oc) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let x = rand_tensor(&mut rng, &[n, ic, h, w], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[oc, ic, k, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[oc], -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
        assert!(max_diff(g.value(y), &conv_oracle(&x, &w, &b, stride, pad, false)) < 1e-12);

        let wd = rand_tensor(&mut rng, &[ic, 1, k, k], -1.0, 1.0);
        let bd = rand_tensor(&mut rng, &[ic], -1.0, 1.0);
        let (wv, bv) = (g.constant(wd.clone()), g.constant(bd.clone()));
        let y = g.depthwise_conv2d(xv, wv, bv, stride, pad).unwrap();
        assert!(max_diff(g.value(y), &conv_oracle(&x, &wd, &bd, stride, pad, true)) < 1e-12);
    }
}

fn bilinear(x: &[f64], h: usize, w: usize, py: f64, px: f64) -> f64 {
    let at = |y: f64, xx: f64| {
        if y < 0.0 || xx < 0.0 || y >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            x[y as usize * w + xx as usize]
        }
    };
    let (y0, x0) = (py.floor(), px.floor());
    let (ly, lx) = (py - y0, px - x0);
    at(y0, x0) * (1.0 - ly) * (1.0 - lx)
        + at(y0, x0 + 1.0) * (1.0 - ly) * lx
        + at(y0 + 1.0, x0) * ly * (1.0 - lx)
        + at(y0 + 1.0, x0 + 1.0) * ly * lx
}

#[test]
fn deformable_forward_matches_direct_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (n, ic, oc, h, w) = (2, 2, 3, rng.random_range(3..7), rng.random_range(3..7));
        let x = rand_tensor(&mut rng, &[n, ic, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, &[oc, ic, 3, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[oc], -1.0, 1.0);
        let off = rand_tensor(&mut rng, &[n, 18, h, w], -2.5, 2.5);
        let mut g = Graph::new();
        let vars = [x.clone(), wt.clone(), b.clone(), off.clone()].map(|t| g.constant(t));
        let y = g.deformable_conv2d(vars[0], vars[1], vars[2], vars[3]).unwrap();
        let got = g.value(y);
        for bi in 0..n {
            for o in 0..oc {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut s = b.data()[o];
                        for t in 0..9 {
                            let oi = |ch: usize| off.data()[((bi * 18 + ch) * h + oy) * w + ox];
                            let py = oy as f64 - 1.0 + (t / 3) as f64 + oi(2 * t);
                            let px = ox as f64 - 1.0 + (t % 3) as f64 + oi(2 * t + 1);
                            for i in 0..ic {
                                let plane = &x.data()[(bi * ic + i) * h * w..][..h * w];
                                s += wt.data()[(o * ic + i) * 9 + t] * bilinear(plane, h, w, py, px);
                            }
                        }
                        let v = got.data()[((bi * oc + o) * h + oy) * w + ox];
                        assert!((v - s).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn conv2d_gradients() {
    for s in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
        let k = [1, 3, 4][(s % 3) as usize];
        let (stride, pad) = (1 + (s % 2) as usize, (s % 2) as usize);
        let ins = [
            rand_tensor(&mut rng, &[2, 2, k + 2 * stride - 2 * pad, k + 3 * stride - 2 * pad], -1.0, 1.0),
            rand_tensor(&mut rng, &[3, 2, k, k], -1.0, 1.0),
            rand_tensor(&mut rng, &[3], -1.0, 1.0),
        ];
        let e = check(&ins, &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
            project(g, y, s)
        });
        assert!(e < TOL, "seed {s}: {e}");
    }
}

#[test]
fn depthwise_gradients() {
    for s in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + s);
        let k = [1, 3][(s % 2) as usize];
        let ins = [
            rand_tensor(&mut rng, &[2, 3, 5, 4], -1.0, 1.0),
            rand_tensor(&mut rng, &[3, 1, k, k], -1.0, 1.0),
            rand_tensor(&mut rng, &[3], -1.0, 1.0),
        ];
        let e = check(&ins, &|g, v| {
            let y = g.depthwise_conv2d(v[0], v[1], v[2], 1, k / 2).unwrap();
            project(g, y, s)
        });
        assert!(e < TOL, "seed {s}: {e}");
    }
}

#[test]
fn deformable_gradients_including_offsets() {
    for s in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + s);
        let ins = [
            rand_tensor(&mut rng, &[1, 2, 4, 5], -1.0, 1.0),
            rand_tensor(&mut rng, &[2, 2, 3, 3], -1.0, 1.0),
            rand_tensor(&mut rng, &[2], -1.0, 1.0),
            rand_tensor(&mut rng, &[1, 18, 4, 5], -1.5, 1.5),
        ];
        let e = check(&ins, &|g, v| {
            let y = g.deformable_conv2d(v[0], v[1], v[2], v[3]).unwrap();
            project(g, y, s)
        });
        assert!(e < TOL, "seed {s}: {e}");
    }
}

#[test]
fn leaky_relu_gradients() {
    for s in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + s);
        // Keep clear of the kink at zero.
        let x = (0..30).map(|_| rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let e = check(&[Tensor::new(&[1, 3, 2, 5], x).unwrap()], &|g, v| {
            let y = g.leaky_relu(v[0], 0.2).unwrap();
            project(g, y, s)
        });
        assert!(e < TOL, "seed {s}: {e}");
    }
}

fn block_gradients(kind: BlockKind, base: u64) {
    for s in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(base + s);
        let params = block_params(&mut rng, kind, 2);
        let mut ins = vec![rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0)];
        ins.extend(params.iter().map(|(_, t)| t.clone()));
        let e = check(&ins, &|g, v| {
            let bound = BoundParams::from_vars(params.iter().map(|(n, _)| n.clone()).zip(v[1..].iter().copied()));
            let y = residual_block(g, &bound, "blk", kind, v[0], 0.2).unwrap();
            project(g, y, s)
        });
        assert!(e < TOL, "{kind:?} seed {s}: {e}");
    }
}

#[test]
fn residual_block_gradients() {
    block_gradients(BlockKind::Residual, 500);
}

#[test]
fn deformable_block_gradients() {
    block_gradients(BlockKind::Deformable, 600);
}

#[test]
fn depthwise_block_gradients() {
    block_gradients(BlockKind::Depthwise, 700);
}

#[test]
fn freq_loss_gradients() {
    let betas: Vec<f64> = (0..100).map(|c| 1.0 + (c % 7) as f64).collect();
    for s in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + s);
        let target = rand_tensor(&mut rng, &[2, 100, 1, 2], -2.0, 2.0);
        let pred = rand_tensor(&mut rng, &[2, 100, 1, 2], -2.0, 2.0);
        let e = check(&[pred], &|g, v| g.weighted_charbonnier(v[0], &target, &betas, 1e-3).unwrap());
        assert!(e < TOL, "seed {s}: {e}");
    }
}

#[test]
fn elementwise_gradients() {
    for s in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + s);
        let ins = [rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0), rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0)];
        let e = check(&ins, &|g, v| {
            let a = g.mul(v[0], v[1]).unwrap();
            let b = g.weighted_sum(&[a, v[1]], &[0.5, 2.0]).unwrap();
            let c = g.add(b, v[0]).unwrap();
            let d = g.scale(c, -1.5).unwrap();
            let m = g.mse(d, &Tensor::zeros(&[1, 2, 3, 3])).unwrap();
            let p = project(g, d, s);
            g.add(m, p).unwrap()
        });
        assert!(e < TOL, "seed {s}: {e}");
    }
}

#[test]
fn fractional_conv_output_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 6, 6]));
    let w = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(g.conv2d(x, w, b, 2, 0).is_err());
    assert!(g.conv2d(x, w, b, 1, 1).is_ok());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
    let w = g.param(Tensor::new(&[1, 1, 1, 2], vec![3.0, 4.0]).unwrap());
    let y = g.mul(x, w).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).is_none());
    assert_eq!(g.grad(w).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn empty_conv_input_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 0, 0]));
    let w = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(g.conv2d(x, w, b, 1, 1).is_err());
}
