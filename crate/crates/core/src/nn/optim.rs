//! AdamW with linear warmup, cosine decay and global-norm clipping.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{GlimError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_frac: 0.05,
            clip_norm: 1.0,
        }
    }
}

/// Learning rate at `step` (0-based) of `total`.
pub fn schedule(cfg: &OptimConfig, step: usize, total: usize) -> f64 {
    let total = total.max(1) as f64;
    let warmup = (cfg.warmup_frac * total).round();
    let s = step as f64;
    if s < warmup {
        cfg.lr * (s + 1.0) / warmup
    } else {
        let progress = ((s - warmup) / (total - warmup).max(1.0)).min(1.0);
        cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

pub struct Trainer {
    cfg: OptimConfig,
    opt: AdamW,
    vars: Vec<Var>,
    total_steps: usize,
    step: usize,
}

impl Trainer {
    pub fn new(vars: Vec<Var>, cfg: OptimConfig, total_steps: usize) -> Result<Self> {
        let params = ParamsAdamW {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        };
        Ok(Trainer {
            opt: AdamW::new(vars.clone(), params)?,
            cfg,
            vars,
            total_steps,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Backpropagates `loss`, clips, and applies one update. Returns the
    /// pre-clipping global gradient norm.
    pub fn step(&mut self, loss: &Tensor) -> Result<f64> {
        let mut grads = loss.backward()?;
        let norm = clip_grads(&mut grads, &self.vars, self.cfg.clip_norm)?;
        if !norm.is_finite() {
            return Err(GlimError::numerical("non-finite gradient norm"));
        }
        self.opt.set_learning_rate(schedule(&self.cfg, self.step, self.total_steps));
        self.opt.step(&grads)?;
        self.step += 1;
        Ok(norm)
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_grads(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = OptimConfig::default();
        let total = 100;
        assert!((schedule(&cfg, 4, total) - cfg.lr).abs() < 1e-15);
        assert!(schedule(&cfg, 0, total) < schedule(&cfg, 3, total));
        assert!(schedule(&cfg, 50, total) < cfg.lr);
        assert!(schedule(&cfg, 99, total) < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        let v = Var::from_tensor(&Tensor::new(&[3.0f64, 4.0], &Device::Cpu).unwrap()).unwrap();
        let loss = (v.as_tensor() * 10.0).unwrap().sum_all().unwrap();
        let mut grads = loss.backward().unwrap();
        let norm = clip_grads(&mut grads, &[v.clone()], 1.0).unwrap();
        assert!((norm - 200f64.sqrt()).abs() < 1e-9);
        let g = grads.get(v.as_tensor()).unwrap().to_vec1::<f64>().unwrap();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_is_minimized() {
        let v = Var::from_tensor(&Tensor::new(&[3.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let cfg = OptimConfig {
            lr: 0.1,
            weight_decay: 0.0,
            clip_norm: 0.0,
            ..OptimConfig::default()
        };
        let mut t = Trainer::new(vec![v.clone()], cfg, 500).unwrap();
        for _ in 0..500 {
            let loss = v.as_tensor().sqr().unwrap().sum_all().unwrap();
            t.step(&loss).unwrap();
        }
        let x = v.as_tensor().to_vec1::<f64>().unwrap();
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2);
    }
}
