//! Cosine learning-rate schedule and bias-corrected ADAM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosLrConfig {
    pub eta_max: f64,
    pub eta_min: f64,
    /// Epochs per restart period.
    pub period_epochs: usize,
}

impl Default for CosLrConfig {
    fn default() -> Self {
        Self { eta_max: 1e-4, eta_min: 1e-7, period_epochs: 30 }
    }
}

impl CosLrConfig {
    /// Learning rate for a global epoch index, restarting every period.
    pub fn at_epoch(&self, epoch: usize) -> Result<f64> {
        let period = self.period_epochs.max(1);
        cos_lr(epoch % period, period, self.eta_max, self.eta_min)
    }
}

/// `eta_min + (eta_max - eta_min) (1 + cos(pi t / period)) / 2`.
pub fn cos_lr(t: usize, period: usize, eta_max: f64, eta_min: f64) -> Result<f64> {
    if period == 0 {
        return Err(invalid!("cosine period must be positive"));
    }
    if t > period {
        return Err(invalid!("epoch {t} lies beyond the period {period}"));
    }
    if t == 0 {
        return Ok(eta_max);
    }
    if t == period {
        return Ok(eta_min);
    }
    let phase = t as f64 / period as f64 * std::f64::consts::PI;
    Ok(eta_min + 0.5 * (eta_max - eta_min) * (1.0 + phase.cos()))
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// One ADAM update. Parameters without a gradient are treated as having a
/// zero gradient. Nothing is modified if any gradient is non-finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(invalid!("learning rate must be non-negative, got {lr}"));
    }
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| invalid!("gradient for unknown parameter `{name}`"))?;
        if g.shape() != p.shape() {
            return Err(invalid!("gradient for `{name}` has shape {:?}, expected {:?}", g.shape(), p.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { name: name.clone(), step: state.step + 1 });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let g = grads.get(name);
        for i in 0..p.numel() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cos_lr(0, 30, 1e-4, 1e-7).unwrap(), 1e-4);
        assert_eq!(cos_lr(30, 30, 1e-4, 1e-7).unwrap(), 1e-7);
        assert!((cos_lr(15, 30, 1e-4, 1e-7).unwrap() - (1e-4 + 1e-7) / 2.0).abs() < 1e-18);
        assert!(cos_lr(31, 30, 1e-4, 1e-7).is_err());
        let c = CosLrConfig::default();
        assert_eq!(c.at_epoch(30).unwrap(), 1e-4);
        assert!(c.at_epoch(29).unwrap() < c.at_epoch(28).unwrap());
    }

    fn one_param(v: Vec<f64>) -> ModelParams {
        let n = v.len();
        ModelParams::from_tensors([("p".to_string(), Tensor::new(&[n], v).unwrap())])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(vec![1.0, -2.0]);
        let mut s = OptimizerState::new(&p);
        s.m.insert("p".into(), Tensor::new(&[2], vec![0.5, 0.5]).unwrap());
        let grads = BTreeMap::from([("p".to_string(), Tensor::zeros(&[2]))]);
        // moments decay, and with a zero first moment nothing moves
        let mut fresh = OptimizerState::new(&p);
        adam_step(&mut p, &grads, &mut fresh, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("p").unwrap().data(), &[1.0, -2.0]);
        let before = s.m["p"].data()[0];
        let mut q = p.clone();
        adam_step(&mut q, &grads, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert!(s.m["p"].data()[0].abs() < before);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = one_param(vec![1.0]);
        let mut s = OptimizerState::new(&p);
        let grads = BTreeMap::from([("p".to_string(), Tensor::new(&[1], vec![f64::NAN]).unwrap())]);
        let err = adam_step(&mut p, &grads, &mut s, 1e-3, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref name, step: 1 } if name == "p"));
        assert_eq!(s.step, 0);
        assert_eq!(p.get("p").unwrap().data(), &[1.0]);
    }

    #[test]
    fn clipping() {
        let mut g = BTreeMap::from([("a".to_string(), Tensor::new(&[2], vec![3.0, 4.0]).unwrap())]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].data()[0] - 0.6).abs() < 1e-15);
    }
}
