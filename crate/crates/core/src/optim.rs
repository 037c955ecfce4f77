//! Adam with decoupled weight decay and the warmup + cosine schedule.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    /// Zeroed moments shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self { config, m, v, step: 0 }
    }

    /// One bias-corrected Adam update plus decoupled decay `lr·wd·p` taken
    /// from the parameters before the update.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam_step",
                expected: alloc::vec![self.m.len()],
                got: alloc::vec![params.len(), grads.len()],
            });
        }
        if !(lr >= 0.0) {
            return Err(invalid("learning rate must be non-negative"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if !p.same_shape(g) || !p.same_shape(m) {
                return Err(Error::Shape {
                    op: "adam_step",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let pd = p.data_mut();
            for (((pi, gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                let decay = lr * weight_decay * *pi;
                *pi -= lr * mhat / (vhat.sqrt() + eps) + decay;
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total`.
pub fn lr_schedule(epoch: f64, total: f64, warmup: f64, base_lr: f64) -> Result<f64> {
    if !(warmup < total) || warmup < 0.0 {
        return Err(invalid("warmup must be non-negative and shorter than training"));
    }
    if !(0.0..=total).contains(&epoch) {
        return Err(Error::OutOfRange {
            what: "epoch",
            value: epoch,
            lo: 0.0,
            hi: total,
        });
    }
    if epoch < warmup {
        return Ok(base_lr * epoch / warmup);
    }
    let progress = (epoch - warmup) / (total - warmup);
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
