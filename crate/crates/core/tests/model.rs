//! Whole-network properties: identity at initialization, the deformable
//! degeneracy and end-to-end gradients.

use freqnet::model::{freqnet_forward, init_params, without_deformable, ModelConfig, ModelParams};
use freqnet::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn randomize(params: &mut ModelParams, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

fn forward(params: &ModelParams, cfg: &ModelConfig, x: &Tensor, m: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let (xv, mv) = (g.constant(x.clone()), g.constant(m.clone()));
    let out = freqnet_forward(&mut g, &bound, xv, mv, cfg).unwrap();
    g.value(out).clone()
}

fn inputs(seed: u64, n: usize, hb: usize, wb: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rand_tensor(&mut rng, &[n, 1, 32 * hb, 32 * wb], 128.0), rand_tensor(&mut rng, &[n, 100, hb, wb], 2.0))
}

#[test]
fn fresh_model_with_pure_frequency_weighting_is_identity() {
    let cfg = ModelConfig { w1: 0.0, w2: 1.0, ..ModelConfig::micro() };
    for seed in 0..3 {
        let params = init_params(&cfg, seed).unwrap();
        let (x, m) = inputs(seed, 2, 1, 2);
        assert_eq!(forward(&params, &cfg, &x, &m).data(), m.data());
    }
}

#[test]
fn fresh_frequency_branch_passes_maps_through() {
    // Any mix: the frequency branch alone contributes w2 * m.
    let cfg = ModelConfig::micro();
    let params = init_params(&cfg, 4).unwrap();
    let (x, m) = inputs(4, 1, 1, 1);
    let both = forward(&params, &cfg, &x, &m);
    let spatial = forward(&params, &ModelConfig { w2: 0.0, ..cfg.clone() }, &x, &m);
    for ((b, s), mv) in both.data().iter().zip(spatial.data()).zip(m.data()) {
        assert!((b - s - cfg.w2 * mv).abs() < 1e-12);
    }
}

#[test]
fn output_shape_and_batch_independence() {
    let cfg = ModelConfig::micro();
    let mut params = init_params(&cfg, 5).unwrap();
    randomize(&mut params, 5, 0.2);
    let (x, m) = inputs(6, 2, 2, 1);
    let out = forward(&params, &cfg, &x, &m);
    assert_eq!(out.shape(), [2, 100, 2, 1]);
    let first = |t: &Tensor, len: usize| Tensor::new(&[1, t.shape()[1], t.shape()[2], t.shape()[3]], t.data()[..len].to_vec()).unwrap();
    let single = forward(&params, &cfg, &first(&x, 64 * 32), &first(&m, 200));
    assert_eq!(single.data(), &out.data()[..200]);
}

#[test]
fn misaligned_inputs_rejected() {
    let cfg = ModelConfig::micro();
    let params = init_params(&cfg, 0).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(&[1, 1, 32, 64]));
    let m = g.constant(Tensor::zeros(&[1, 100, 1, 1]));
    assert!(freqnet_forward(&mut g, &bound, x, m, &cfg).is_err());
    let m = g.constant(Tensor::zeros(&[1, 36, 1, 2]));
    assert!(freqnet_forward(&mut g, &bound, x, m, &cfg).is_err());
}

#[test]
fn zero_offsets_match_plain_twin() {
    let cfg = ModelConfig::micro();
    for seed in 0..3 {
        let mut params = init_params(&cfg, seed).unwrap();
        randomize(&mut params, 10 + seed, 0.3);
        for (name, t) in params.iter_mut() {
            if name.contains(".offset.") {
                t.data_mut().fill(0.0);
            }
        }
        let (twin_cfg, twin) = without_deformable(&cfg, &params);
        twin.validate(&twin_cfg).unwrap();
        let (x, m) = inputs(seed, 1, 2, 1);
        let a = forward(&params, &cfg, &x, &m);
        let b = forward(&twin, &twin_cfg, &x, &m);
        let err = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err}");
    }
}

#[test]
fn group_kinds_can_be_swapped() {
    for (sen_rg, sen_drg, frn_dwrg, frn_rg) in [(2, 0, 0, 2), (0, 2, 2, 0), (1, 0, 0, 0)] {
        let cfg = ModelConfig { sen_rg, sen_drg, frn_dwrg, frn_rg, ..ModelConfig::micro() };
        let params = init_params(&cfg, 1).unwrap();
        params.validate(&cfg).unwrap();
        let (x, m) = inputs(2, 1, 1, 1);
        assert_eq!(forward(&params, &cfg, &x, &m).shape(), [1, 100, 1, 1]);
    }
}

#[test]
fn end_to_end_gradients_match_differences() {
    let cfg = ModelConfig::micro();
    let mut params = init_params(&cfg, 3).unwrap();
    randomize(&mut params, 33, 0.2);
    let (x, m) = inputs(7, 1, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = rand_tensor(&mut rng, &[1, 100, 1, 1], 2.0);
    let betas = vec![1.0; 100];

    let loss_of = |p: &ModelParams| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let (xv, mv) = (g.constant(x.clone()), g.constant(m.clone()));
        let out = freqnet_forward(&mut g, &bound, xv, mv, &cfg).unwrap();
        let l = g.weighted_charbonnier(out, &target, &betas, 1e-3).unwrap();
        g.value(l).item().unwrap()
    };

    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let (xv, mv) = (g.constant(x.clone()), g.constant(m.clone()));
    let out = freqnet_forward(&mut g, &bound, xv, mv, &cfg).unwrap();
    let l = g.weighted_charbonnier(out, &target, &betas, 1e-3).unwrap();
    g.backward(l).unwrap();

    let names: Vec<String> = params.names().cloned().collect();
    let mut checked = 0;
    for name in names.iter().filter(|n| n.ends_with(".w")) {
        let grad = g.grad(bound.var(name).unwrap()).unwrap().clone();
        for j in [0, grad.numel() / 2, grad.numel() - 1] {
            let h = 1e-6;
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[j] += h;
            let up = loss_of(&p);
            p.get_mut(name).unwrap().data_mut()[j] -= 2.0 * h;
            let down = loss_of(&p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.data()[j];
            assert!((analytic - numeric).abs() <= 1e-4 * numeric.abs().max(1e-3), "{name}[{j}]: {analytic} vs {numeric}");
            checked += 1;
        }
    }
    assert!(checked > 30);
}
