//! Built-in numerical checks: DCT and codec round trips, analytic against
//! finite-difference gradients, and degenerate-configuration equivalences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::codec::{forward_dct_block, inverse_dct_block, Image, PixelBlock, RegionSpec};
use crate::enhance::{image_to_maps, reconstruct_merged};
use crate::error::Result;
use crate::loss::table1_weights;
use crate::model::{
    freqnet_forward, init_params, residual_block, without_deformable, BlockKind, BoundParams, ModelConfig, ModelParams,
};
use crate::pipeline::to_ycc;
use crate::tensor::{Graph, Tensor, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    /// Largest error seen over all cases.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &str, errors: &[f64], tolerance: f64) -> Self {
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let passed = errors.iter().all(|e| *e < tolerance);
        Self { name: name.to_string(), cases: errors.len(), worst, tolerance, passed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfCheckConfig {
    pub dct_blocks: usize,
    pub codec_images: usize,
    pub grad_seeds: u64,
    pub seed: u64,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        Self { dct_blocks: 1000, codec_images: 50, grad_seeds: 20, seed: 0 }
    }
}

pub fn run(cfg: &SelfCheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = dct_round_trip(cfg.dct_blocks, cfg.seed);
    out.push(codec_round_trip(cfg.codec_images, cfg.seed)?);
    out.extend(gradient_checks(cfg.grad_seeds, cfg.seed)?);
    out.extend(degeneracy_checks(cfg.seed)?);
    Ok(out)
}

/// Round-trip max abs error and Parseval relative error over random blocks.
pub fn dct_round_trip(blocks: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut round = Vec::with_capacity(blocks);
    let mut energy = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let data: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(-128.0..128.0)).collect();
        let p = PixelBlock::new(32, 32, data).expect("square block");
        let d = forward_dct_block(&p);
        let back = inverse_dct_block(&d);
        round.push(p.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let ep: f64 = p.as_slice().iter().map(|v| v * v).sum();
        let ed: f64 = d.as_slice().iter().map(|v| v * v).sum();
        energy.push((ep - ed).abs() / ep);
    }
    vec![CheckOutcome::new("dct round trip", &round, 1e-9), CheckOutcome::new("dct parseval", &energy, 1e-9)]
}

/// Image to maps, stage-1 fill with the image's own blocks, inverse DCT and
/// back to RGB; worst per-pixel deviation in intensity levels.
pub fn codec_round_trip(images: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0DEC);
    let mut errors = Vec::with_capacity(images);
    for _ in 0..images {
        let (w, h) = (32 * rng.random_range(1..4), 32 * rng.random_range(1..4));
        let data: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0..=255u8) as f64).collect();
        let img = Image::new(w, h, 3, data)?;
        let (maps, grid) = image_to_maps(&img, RegionSpec::default())?;
        let ycc = to_ycc(&img)?;
        let back = reconstruct_merged(&maps, &grid, &ycc.cb, &ycc.cr, 3)?;
        errors.push(img.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(CheckOutcome::new("codec round trip", &errors, 1.0))
}

/// `sum(out * r)` for a fixed random `r`, reducing any output to a scalar
/// with a generic gradient.
pub fn random_projection(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let n = g.value(out).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::new(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let r = g.constant(r);
    let p = g.mul(out, r)?;
    g.sum(p)
}

/// Largest norm-wise relative error `|a - f| / max(|a|, |f|)` between the
/// analytic gradient of every input and its central finite difference.
/// `build` must return a scalar.
pub fn gradient_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> =
        vars.iter().zip(inputs).map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();

    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vars)?;
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        let mut num = 0.0;
        let (mut na, mut nf) = (0.0, 0.0);
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let f = (up - down) / (2.0 * FD_STEP);
            num += (a.data()[j] - f).powi(2);
            na += a.data()[j].powi(2);
            nf += f * f;
        }
        let scale = na.sqrt().max(nf.sqrt());
        if scale > 0.0 {
            worst = worst.max(num.sqrt() / scale);
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid shape")
}

/// Kernel, stride, padding and input size with an integral output.
fn conv_shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let k = [1, 3, 4][rng.random_range(0..3)];
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=(k / 2).min(1));
    let out = rng.random_range(2..5);
    (k, stride, pad, (out - 1) * stride + k - 2 * pad)
}

/// Block parameters with every entry (tails and offset branches included)
/// drawn from N(0, 0.3^2).
fn randomized_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut p = init_params(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let normal = Normal::new(0.0, 0.3).expect("valid sigma");
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    Ok(p)
}

fn block_check(kind: BlockKind, prefix: &str, seed: u64) -> Result<f64> {
    let cfg = ModelConfig::micro();
    let params = randomized_params(&cfg, seed)?;
    let names: Vec<String> = params.names().filter(|n| n.starts_with(&format!("{prefix}."))).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![random_tensor(&mut rng, &[1, cfg.feature_channels, 5, 5], -1.0, 1.0)];
    inputs.extend(names.iter().map(|n| params.get(n).expect("listed").clone()));
    gradient_error(&inputs, |g, v| {
        let bound = BoundParams::from_vars(names.iter().cloned().zip(v[1..].iter().copied()));
        let out = residual_block(g, &bound, prefix, kind, v[0], cfg.leaky_slope)?;
        random_projection(g, out, seed)
    })
}

/// Every differentiable operator and block, `seeds` randomized cases each.
pub fn gradient_checks(seeds: u64, base: u64) -> Result<Vec<CheckOutcome>> {
    let mut errs: [Vec<f64>; 9] = Default::default();
    for s in base..base + seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);

        let (k, stride, pad, size) = conv_shape(&mut rng);
        let (n, ic, oc) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let ins = [
            random_tensor(&mut rng, &[n, ic, size, size], -1.0, 1.0),
            random_tensor(&mut rng, &[oc, ic, k, k], -1.0, 1.0),
            random_tensor(&mut rng, &[oc], -1.0, 1.0),
        ];
        errs[0].push(gradient_error(&ins, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            random_projection(g, y, s)
        })?);

        let (k, stride, pad, size) = conv_shape(&mut rng);
        let c = rng.random_range(1..4);
        let ins = [
            random_tensor(&mut rng, &[n, c, size, size], -1.0, 1.0),
            random_tensor(&mut rng, &[c, 1, k, k], -1.0, 1.0),
            random_tensor(&mut rng, &[c], -1.0, 1.0),
        ];
        errs[1].push(gradient_error(&ins, |g, v| {
            let y = g.depthwise_conv2d(v[0], v[1], v[2], stride, pad)?;
            random_projection(g, y, s)
        })?);

        let (h, w) = (rng.random_range(3..6), rng.random_range(3..6));
        let ins = [
            random_tensor(&mut rng, &[n, ic, h, w], -1.0, 1.0),
            random_tensor(&mut rng, &[oc, ic, 3, 3], -1.0, 1.0),
            random_tensor(&mut rng, &[oc], -1.0, 1.0),
            random_tensor(&mut rng, &[n, 18, h, w], -1.5, 1.5),
        ];
        errs[2].push(gradient_error(&ins, |g, v| {
            let y = g.deformable_conv2d(v[0], v[1], v[2], v[3])?;
            random_projection(g, y, s)
        })?);

        let x: Vec<f64> = (0..24)
            .map(|_| {
                let m = rng.random_range(0.05..2.0);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        errs[3].push(gradient_error(&[Tensor::new(&[1, 2, 3, 4], x)?], |g, v| {
            let y = g.leaky_relu(v[0], 0.2)?;
            random_projection(g, y, s)
        })?);

        errs[4].push(block_check(BlockKind::Residual, "sen.g0.b0", s)?);
        errs[5].push(block_check(BlockKind::Deformable, "sen.g1.b0", s)?);
        errs[6].push(block_check(BlockKind::Depthwise, "frn.g0.b0", s)?);

        let betas = table1_weights(10)?.betas;
        let shape = [n, 100, 1, 2];
        let target = random_tensor(&mut rng, &shape, -2.0, 2.0);
        let pred = random_tensor(&mut rng, &shape, -2.0, 2.0);
        errs[7].push(gradient_error(&[pred], |g, v| g.weighted_charbonnier(v[0], &target, &betas, 1e-3))?);

        let ins = [random_tensor(&mut rng, &[n, 2, 3, 3], -1.0, 1.0), random_tensor(&mut rng, &[n, 2, 3, 3], -1.0, 1.0)];
        errs[8].push(gradient_error(&ins, |g, v| {
            let a = g.mul(v[0], v[1])?;
            let b = g.weighted_sum(&[a, v[0]], &[0.7, -1.3])?;
            let c = g.add(b, v[1])?;
            let d = g.scale(c, 2.5)?;
            random_projection(g, d, s)
        })?);
    }
    let names = [
        "grad conv2d",
        "grad depthwise_conv2d",
        "grad deformable_conv2d",
        "grad leaky_relu",
        "grad residual block",
        "grad deformable residual block",
        "grad depthwise residual block",
        "grad freq_loss",
        "grad elementwise",
    ];
    Ok(names.iter().zip(&errs).map(|(n, e)| CheckOutcome::new(n, e, GRAD_TOLERANCE)).collect())
}

/// Zero offsets reduce deformable convolution to a plain 3x3 convolution,
/// and a model whose offset branches are zero to its plain-block twin.
pub fn degeneracy_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDEF0);
    let mut conv_err = Vec::new();
    for _ in 0..10 {
        let (n, ic, oc) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5));
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let x = random_tensor(&mut rng, &[n, ic, h, w], -100.0, 100.0);
        let wt = random_tensor(&mut rng, &[oc, ic, 3, 3], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[oc], -1.0, 1.0);
        let mut g = Graph::new();
        let (x, wt, b) = (g.constant(x), g.constant(wt), g.constant(b));
        let off = g.constant(Tensor::zeros(&[n, 18, h, w]));
        let d = g.deformable_conv2d(x, wt, b, off)?;
        let c = g.conv2d(x, wt, b, 1, 1)?;
        conv_err.push(max_abs_diff(g.value(d), g.value(c)));
    }

    let mut model_err = Vec::new();
    for s in 0..3 {
        let cfg = ModelConfig { sen_drg: 2, ..ModelConfig::micro() };
        let mut params = randomized_params(&cfg, seed + s)?;
        for (name, t) in params.iter_mut() {
            if name.contains(".offset.") {
                t.data_mut().fill(0.0);
            }
        }
        let (twin_cfg, twin) = without_deformable(&cfg, &params);
        let lr = random_tensor(&mut rng, &[1, 1, 64, 32], -128.0, 128.0);
        let m = random_tensor(&mut rng, &[1, 100, 2, 1], -3.0, 3.0);
        let run = |p: &ModelParams, c: &ModelConfig| -> Result<Tensor> {
            let mut g = Graph::new();
            let bound = p.bind(&mut g, false);
            let (x, mv) = (g.constant(lr.clone()), g.constant(m.clone()));
            let out = freqnet_forward(&mut g, &bound, x, mv, c)?;
            Ok(g.value(out).clone())
        };
        model_err.push(max_abs_diff(&run(&params, &cfg)?, &run(&twin, &twin_cfg)?));
    }
    Ok(vec![
        CheckOutcome::new("deformable zero offsets vs conv2d", &conv_err, 1e-12),
        CheckOutcome::new("zero offset branches vs plain twin", &model_err, 1e-10),
    ])
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let cfg = SelfCheckConfig { dct_blocks: 20, codec_images: 2, grad_seeds: 2, seed: 5 };
        for o in run(&cfg).unwrap() {
            assert!(o.passed, "{o:?}");
        }
    }

    #[test]
    fn gradient_error_catches_wrong_gradient() {
        // x * x has gradient 2x; feeding a constant copy hides half of it
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let err = gradient_error(std::slice::from_ref(&x), |g, v| {
            let c = g.constant(g.value(v[0]).clone());
            let y = g.mul(v[0], c)?;
            g.sum(y)
        })
        .unwrap();
        assert!(err > 0.4, "{err}");
    }
}
