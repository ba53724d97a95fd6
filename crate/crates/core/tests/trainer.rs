//! Optimizer, schedule, data preparation and the training loop.

use std::collections::BTreeMap;

use freqnet::codec::{denormalize, ChannelStats, RegionSpec};
use freqnet::model::{init_params, ModelConfig, ModelParams};
use freqnet::pipeline::{luma_maps, reconstruct_luma};
use freqnet::tensor::Tensor;
use freqnet::train::{
    adam_step, clip_global_norm, cos_lr, evaluate, identity_baseline_loss, make_patch_pairs, pair_stats,
    prepare_sample, synthetic_images, train, AdamConfig, Checkpoint, CosLrConfig, EvalContext, OptimizerState, Sample,
    TrainConfig,
};
use freqnet::loss::{table1_weights, CharbonnierParams};
use freqnet::Error;

fn scalar_params(x: f64) -> ModelParams {
    ModelParams::from_tensors([("x".to_string(), Tensor::new(&[1], vec![x]).unwrap())])
}

fn grads(g: f64) -> BTreeMap<String, Tensor> {
    BTreeMap::from([("x".to_string(), Tensor::new(&[1], vec![g]).unwrap())])
}

#[test]
fn cos_lr_identities() {
    assert_eq!(cos_lr(0, 30, 1e-4, 1e-7).unwrap(), 1e-4);
    assert_eq!(cos_lr(30, 30, 1e-4, 1e-7).unwrap(), 1e-7);
    assert!((cos_lr(15, 30, 1e-4, 1e-7).unwrap() - (1e-4 + 1e-7) / 2.0).abs() < 1e-18);
    assert!(cos_lr(31, 30, 1e-4, 1e-7).is_err());
    let c = CosLrConfig::default();
    assert_eq!(c.at_epoch(30).unwrap(), c.eta_max);
    assert!(c.at_epoch(29).unwrap() < c.at_epoch(28).unwrap());
}

#[test]
fn first_adam_step_closed_form() {
    // m1 = (1 - b1) g, v1 = (1 - b2) g^2; bias correction leaves g and g^2.
    for g in [3.0, -0.02, 1e-5] {
        let mut p = scalar_params(1.0);
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &grads(g), &mut st, 1e-3, &AdamConfig::default()).unwrap();
        let want = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
        assert!((p.get("x").unwrap().data()[0] - want).abs() < 1e-15);
        assert!((st.m["x"].data()[0] - 0.1 * g).abs() <= 1e-15 * g.abs());
        assert!((st.v["x"].data()[0] - 0.01 * g * g).abs() <= 1e-15 * g * g);
        assert_eq!(st.step, 1);
    }
}

#[test]
fn zero_gradient_keeps_params_and_decays_moments() {
    let mut p = scalar_params(2.0);
    let mut st = OptimizerState::new(&p);
    let cfg = AdamConfig::default();
    adam_step(&mut p, &grads(1.0), &mut st, 1e-3, &cfg).unwrap();
    let before = p.clone();
    let (m, v) = (st.m["x"].data()[0], st.v["x"].data()[0]);
    let mut q = before.clone();
    let mut st2 = st.clone();
    st2.m.insert("x".into(), Tensor::zeros(&[1]));
    st2.v.insert("x".into(), Tensor::zeros(&[1]));
    adam_step(&mut q, &grads(0.0), &mut st2, 1e-3, &cfg).unwrap();
    assert_eq!(q, before);
    adam_step(&mut p, &grads(0.0), &mut st, 1e-3, &cfg).unwrap();
    assert_eq!(st.m["x"].data()[0], 0.9 * m);
    assert_eq!(st.v["x"].data()[0], 0.99 * v);
}

#[test]
fn quadratic_descends_with_bounded_steps() {
    // f(x) = (x - 3)^2, simulated alongside by hand.
    let mut p = scalar_params(0.0);
    let mut st = OptimizerState::new(&p);
    let lr = 1e-4;
    let f = |x: f64| (x - 3.0) * (x - 3.0);
    let mut prev = 0.0;
    for _ in 0..200 {
        let x = p.get("x").unwrap().data()[0];
        adam_step(&mut p, &grads(2.0 * (x - 3.0)), &mut st, lr, &AdamConfig::default()).unwrap();
        let nx = p.get("x").unwrap().data()[0];
        assert!(f(nx) < f(x));
        assert!((nx - x).abs() <= lr * 1.0001 / (1.0 - 0.9));
        prev = nx;
    }
    assert!(prev > 0.0);
}

#[test]
fn non_finite_gradient_aborts_without_changes() {
    let mut p = scalar_params(1.0);
    let mut st = OptimizerState::new(&p);
    let before = (p.clone(), st.clone());
    let err = adam_step(&mut p, &grads(f64::NAN), &mut st, 1e-3, &AdamConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NonFinite { ref name, step: 1 } if name == "x"));
    assert_eq!((p, st), before);
}

#[test]
fn global_norm_clip() {
    let mut g = BTreeMap::from([
        ("a".to_string(), Tensor::new(&[2], vec![3.0, 0.0]).unwrap()),
        ("b".to_string(), Tensor::new(&[1], vec![4.0]).unwrap()),
    ]);
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g["a"].data()[0] - 0.6).abs() < 1e-15 && (g["b"].data()[0] - 0.8).abs() < 1e-15);
    assert!((clip_global_norm(&mut g, 10.0) - 1.0).abs() < 1e-15);
}

#[test]
fn patch_pairs_aligned_and_reproducible() {
    let imgs = synthetic_images(3, 160, 4);
    let cfg = TrainConfig { patches_per_image: 5, ..TrainConfig::default() };
    let a = make_patch_pairs(&imgs, &cfg, 9).unwrap();
    assert_eq!(a.len(), 15);
    for p in &a {
        assert_eq!(p.hr_offset, (4 * p.lr_offset.0, 4 * p.lr_offset.1));
        assert_eq!(p.hr_offset.0 % 32, 0);
        assert_eq!((p.lr_patch.width, p.hr_patch.width), (16, 64));
    }
    assert_eq!(a, make_patch_pairs(&imgs, &cfg, 9).unwrap());
    assert_ne!(a, make_patch_pairs(&imgs, &cfg, 10).unwrap());
    let small = synthetic_images(1, 48, 0);
    assert!(make_patch_pairs(&small, &cfg, 0).unwrap().is_empty());
}

fn toy(n: usize) -> (Vec<Sample>, ChannelStats) {
    let cfg = TrainConfig { patches_per_image: 1, ..TrainConfig::default() };
    let pairs = make_patch_pairs(&synthetic_images(n, 64, 21), &cfg, 0).unwrap();
    let stats = pair_stats(&pairs, RegionSpec::default()).unwrap();
    (pairs.iter().map(|p| prepare_sample(p, &stats).unwrap()).collect(), stats)
}

#[test]
fn sample_shapes_and_hr_round_trip() {
    let cfg = TrainConfig { patches_per_image: 1, ..TrainConfig::default() };
    let pairs = make_patch_pairs(&synthetic_images(2, 64, 22), &cfg, 0).unwrap();
    let stats = pair_stats(&pairs, RegionSpec::default()).unwrap();
    let s = prepare_sample(&pairs[0], &stats).unwrap();
    assert_eq!(s.lr_up.shape(), [1, 1, 64, 64]);
    assert_eq!((s.m_lr.channels(), s.m_lr.hb(), s.m_lr.wb()), (100, 2, 2));
    assert!(s.m_hr.is_normalized());

    let luma = pairs[0].hr_patch.luma();
    let (_, hr_grid) = luma_maps(&luma, RegionSpec::default()).unwrap();
    let back = reconstruct_luma(&denormalize(&s.m_hr, &stats).unwrap(), &hr_grid).unwrap();
    let err = back.data.iter().zip(&luma.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");

    let broken = ChannelStats { r: 10, means: vec![0.0; 36], stds: vec![1.0; 36], sample_count: 1 };
    assert!(prepare_sample(&pairs[0], &broken).is_err());
    let small = ChannelStats { r: 6, means: vec![0.0; 36], stds: vec![1.0; 36], sample_count: 1 };
    assert_eq!(prepare_sample(&pairs[0], &small).unwrap().m_hr.channels(), 36);
}

fn micro_cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        iterations,
        log_every: 1,
        checkpoint_every: 0,
        coslr: CosLrConfig { eta_max: 1e-3, eta_min: 1e-5, period_epochs: 3 },
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (samples, stats) = toy(4);
    let mcfg = ModelConfig { w1: 0.5, w2: 1.0, ..ModelConfig::micro() };
    let p0 = init_params(&mcfg, 1).unwrap();
    let full = train(&mcfg, &micro_cfg(6), &samples, &stats, p0.clone(), OptimizerState::new(&p0), None).unwrap();
    let again = train(&mcfg, &micro_cfg(6), &samples, &stats, p0.clone(), OptimizerState::new(&p0), None).unwrap();
    assert_eq!(full.log, again.log);
    assert_eq!(full.params, again.params);
    assert_eq!(full.log.len(), 6);
    // Epochs of two batches: learning rate changes every second step.
    assert_eq!(full.log[0].lr, full.log[1].lr);
    assert!(full.log[2].lr < full.log[1].lr);

    let half = train(&mcfg, &micro_cfg(3), &samples, &stats, p0.clone(), OptimizerState::new(&p0), None).unwrap();
    let rest = train(&mcfg, &micro_cfg(3), &samples, &stats, half.params, half.optimizer, None).unwrap();
    assert_eq!(rest.params, full.params);
    assert_eq!(rest.log, full.log[3..]);
    assert_eq!(rest.optimizer.step, 6);
}

#[test]
fn checkpoints_written_and_loadable() {
    let (samples, stats) = toy(2);
    let mcfg = ModelConfig::micro();
    let p0 = init_params(&mcfg, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { checkpoint_every: 2, ..micro_cfg(3) };
    let out = train(&mcfg, &cfg, &samples, &stats, p0.clone(), OptimizerState::new(&p0), Some(dir.path())).unwrap();
    let ck = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(ck.optimizer.step, 3);
    assert_eq!(ck.model, mcfg);
    assert_eq!(ck.train, cfg);
    assert_eq!(ck.stats.as_ref().unwrap().r, 10);
    for (name, t) in out.params.iter() {
        let saved = ck.params.get(name).unwrap();
        assert!(t.data().iter().zip(saved.data()).all(|(a, b)| *a as f32 as f64 == *b));
    }
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn divergence_aborts_and_keeps_last_checkpoint() {
    let (samples, stats) = toy(2);
    let mcfg = ModelConfig::micro();
    let p0 = init_params(&mcfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    train(&mcfg, &micro_cfg(1), &samples, &stats, p0.clone(), OptimizerState::new(&p0), Some(dir.path())).unwrap();

    let wild = TrainConfig { coslr: CosLrConfig { eta_max: 1e300, eta_min: 1e300, period_epochs: 1 }, checkpoint_every: 100, ..micro_cfg(5) };
    let err = train(&mcfg, &wild, &samples, &stats, p0.clone(), OptimizerState::new(&p0), Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err:?}");
    assert_eq!(Checkpoint::load(dir.path()).unwrap().optimizer.step, 1);
}

#[test]
fn identity_model_with_zero_lr_keeps_baseline() {
    let (samples, stats) = toy(4);
    let mcfg = ModelConfig { w1: 0.0, w2: 1.0, ..ModelConfig::micro() };
    let p0 = init_params(&mcfg, 4).unwrap();
    let cfg = TrainConfig { coslr: CosLrConfig { eta_max: 0.0, eta_min: 0.0, period_epochs: 1 }, batch_size: 4, ..micro_cfg(4) };
    let out = train(&mcfg, &cfg, &samples, &stats, p0.clone(), OptimizerState::new(&p0), None).unwrap();
    let base = identity_baseline_loss(&samples, &table1_weights(10).unwrap(), CharbonnierParams::default()).unwrap();
    assert!(out.log.iter().all(|r| (r.l_freq - base).abs() <= 1e-12 * base));
    assert_eq!(out.params, p0);
}

#[test]
fn evaluation_report_schema() {
    let imgs = synthetic_images(2, 64, 30);
    let cfg = TrainConfig { patches_per_image: 1, ..TrainConfig::default() };
    let stats = pair_stats(&make_patch_pairs(&imgs, &cfg, 0).unwrap(), RegionSpec::default()).unwrap();
    let mcfg = ModelConfig { w1: 0.0, w2: 1.0, ..ModelConfig::micro() };
    let ctx = EvalContext {
        stats,
        stats_id: "toy".into(),
        weights: table1_weights(10).unwrap(),
        charbonnier: CharbonnierParams::default(),
    };
    let named: Vec<(String, _)> = imgs.into_iter().enumerate().map(|(i, im)| (format!("img{i}"), im)).collect();
    let report = evaluate(&init_params(&mcfg, 0).unwrap(), &mcfg, &ctx, &named).unwrap();
    assert_eq!(report.images.len(), 2);
    assert_eq!(report.aggregate.image, "aggregate");
    assert!(report.images.iter().all(|r| r.r == 10 && r.stats_id == "toy" && r.epsilon == 1e-3));
}
