//! Helpers shared by the integration tests.
#![allow(dead_code)]

use freqnet::model::BlockKind;
use freqnet::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

fn scalar_value(inputs: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).item().unwrap()
}

/// Worst per-input relative error, `|analytic - numeric| / |numeric|` in
/// the Euclidean norm.
pub fn check(inputs: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] += STEP;
            let up = scalar_value(&shifted, build);
            shifted[i].data_mut()[j] -= 2.0 * STEP;
            let down = scalar_value(&shifted, build);
            *slot = (up - down) / (2.0 * STEP);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(if norm > 1e-12 { diff / norm } else { diff });
    }
    worst
}

/// Contracts `y` with fixed random weights so every output element matters.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
    let shape = g.value(y).shape().to_vec();
    let r = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let m = g.mul(y, r).unwrap();
    g.sum(m).unwrap()
}

pub fn block_params(rng: &mut ChaCha8Rng, kind: BlockKind, c: usize) -> Vec<(String, Tensor)> {
    let mut specs = vec![("conv2.b", vec![c])];
    match kind {
        BlockKind::Residual => specs.extend([("conv1.w", vec![c, c, 3, 3]), ("conv1.b", vec![c]), ("conv2.w", vec![c, c, 3, 3])]),
        BlockKind::Deformable => specs.extend([
            ("conv1.w", vec![c, c, 3, 3]),
            ("conv1.b", vec![c]),
            ("offset.w", vec![18, c, 3, 3]),
            ("offset.b", vec![18]),
            ("conv2.w", vec![c, c, 3, 3]),
        ]),
        BlockKind::Depthwise => specs.extend([("conv1.w", vec![c, 1, 3, 3]), ("conv1.b", vec![c]), ("conv2.w", vec![c, c, 1, 1])]),
    }
    specs.into_iter().map(|(n, shape)| (format!("blk.{n}"), rand_tensor(rng, &shape, -0.5, 0.5))).collect()
}
