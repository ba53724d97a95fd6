//! Trains the micro network on synthetic patches and compares it with the
//! identity predictor.
//!
//! ```text
//! cargo run --release --example toy_train -- [iterations] [eta_max] [w1] [w2] [period_epochs] [images]
//! ```
//!
//! Set `TOY_BREAKDOWN=1` to print the loss per annulus.

use freqnet::codec::RegionSpec;
use freqnet::model::{init_params, ModelConfig};
use freqnet::train::{
    identity_baseline_loss, make_patch_pairs, pair_stats, prepare_sample, samples_loss, synthetic_images, train,
    CosLrConfig, OptimizerState, TrainConfig,
};

fn main() -> freqnet::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);

    let model = ModelConfig { w1: arg(2, 0.5), w2: arg(3, 1.0), ..ModelConfig::micro() };
    let cfg = TrainConfig {
        iterations: arg(0, 500.0) as usize,
        batch_size: 8,
        patches_per_image: 1,
        log_every: 50,
        coslr: CosLrConfig { eta_max: arg(1, 3e-3), eta_min: 1e-5, period_epochs: arg(4, 30.0) as usize },
        seed: 7,
        ..TrainConfig::default()
    };
    let train_pairs = make_patch_pairs(&synthetic_images(arg(5, 16.0) as usize, 64, 100), &cfg, 1)?;
    let held_pairs = make_patch_pairs(&synthetic_images(16, 64, 200), &cfg, 2)?;
    let stats = pair_stats(&train_pairs, RegionSpec::default())?;
    let prep = |pairs: &[_]| pairs.iter().map(|p| prepare_sample(p, &stats)).collect::<freqnet::Result<Vec<_>>>();
    let (train_set, held_set) = (prep(&train_pairs)?, prep(&held_pairs)?);

    let weights = cfg.weights.profile(model.region)?;
    let charb = cfg.charbonnier()?;
    let params = init_params(&model, cfg.seed)?;
    let t0 = std::time::Instant::now();
    let chunk = TrainConfig { iterations: cfg.log_every, ..cfg.clone() };
    let (mut p, mut opt, mut log) = (params.clone(), OptimizerState::new(&params), Vec::new());
    for _ in 0..cfg.iterations / cfg.log_every {
        let o = train(&model, &chunk, &train_set, &stats, p, opt, None)?;
        (p, opt) = (o.params, o.optimizer);
        log.extend(o.log);
        let held = samples_loss(&p, &model, &held_set, &weights, charb)?;
        println!("  step {:4}  held-out {held:.5e}", opt.step);
    }
    let out = freqnet::train::TrainOutcome { params: p, optimizer: opt, log };
    for r in &out.log {
        println!("iter {:4}  lr {:.2e}  l_freq {:.5e}  frm {:.3}", r.iter, r.lr, r.l_freq, r.frm);
    }
    let base_train = identity_baseline_loss(&train_set, &weights, charb)?;
    let base_held = identity_baseline_loss(&held_set, &weights, charb)?;
    let init_train = samples_loss(&params, &model, &train_set, &weights, charb)?;
    let fin_train = samples_loss(&out.params, &model, &train_set, &weights, charb)?;
    let fin_held = samples_loss(&out.params, &model, &held_set, &weights, charb)?;
    println!("train: identity {base_train:.5e}  init {init_train:.5e}  final {fin_train:.5e}  ratio {:.3}", fin_train / base_train);
    println!("held-out: identity {base_held:.5e}  final {fin_held:.5e}  ratio {:.3}", fin_held / base_held);
    println!("elapsed {:.1?}", t0.elapsed());
    if std::env::var_os("TOY_BREAKDOWN").is_some() {
        breakdown("held-out", &out.params, &model, &held_set, &weights, charb)?;
        breakdown("train", &out.params, &model, &train_set, &weights, charb)?;
    }
    Ok(())
}

/// Per-annulus share of L_freq for the identity predictor and the model.
fn breakdown(
    label: &str,
    params: &freqnet::model::ModelParams,
    model: &ModelConfig,
    samples: &[freqnet::train::Sample],
    weights: &freqnet::loss::WeightProfile,
    charb: freqnet::loss::CharbonnierParams,
) -> freqnet::Result<()> {
    use freqnet::loss::{annulus_of, charbonnier};
    use freqnet::tensor::Graph;
    let mut ident = [0.0; 11];
    let mut net = [0.0; 11];
    for s in samples {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let x = g.constant(s.lr_up.clone());
        let m = g.constant(freqnet::pipeline::maps_tensor(&s.m_lr));
        let o = freqnet::model::freqnet_forward(&mut g, &bound, x, m, model)?;
        let sr = freqnet::pipeline::tensor_maps(g.value(o), 0, &s.m_lr, true)?;
        let norm = (100 * s.m_hr.hb() * s.m_hr.wb() * samples.len()) as f64;
        for c in 0..100 {
            let k = annulus_of(c / 10, c % 10);
            let b = weights.betas[c];
            for i in 0..s.m_hr.channel(c).len() {
                ident[k] += b * charbonnier(s.m_lr.channel(c)[i], s.m_hr.channel(c)[i], charb) / norm;
                net[k] += b * charbonnier(sr.channel(c)[i], s.m_hr.channel(c)[i], charb) / norm;
            }
        }
    }
    println!("{label} per annulus (identity -> model):");
    for k in 1..=10 {
        println!("  {k:2}: {:.4} -> {:.4}", ident[k], net[k]);
    }
    Ok(())
}
