//! AdamW with decoupled weight decay, and learning-rate schedules.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use lgvit_tensor::{Tensor, TensorError};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Parameters that never receive weight decay: biases, norm affine
/// parameters, the class token and the positional embedding.
pub fn is_decay_excluded(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    last == "bias"
        || last == "cls_token"
        || last == "pos_embed"
        || name.split('.').any(|seg| seg.starts_with("norm"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWHyper {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub hyper: AdamWHyper,
    /// Number of completed updates.
    pub t: u64,
    pub state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(hyper: AdamWHyper) -> Self {
        Self {
            hyper,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// One update of every named parameter.
    ///
    /// `lr_scale(name)` multiplies the learning rate per parameter. Missing
    /// gradients count as zero.
    pub fn step(&mut self, params: &[(String, Tensor<f32>)], lr: f64, lr_scale: impl Fn(&str) -> f64) -> Result<()> {
        self.t += 1;
        let AdamWHyper {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params {
            let n = p.numel();
            let moments = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if moments.m.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw_step",
                    detail: format!("`{name}` has {n} values but its moments hold {}", moments.m.len()),
                }
                .into());
            }
            let step_lr = lr * lr_scale(name);
            let wd = if is_decay_excluded(name) { 0.0 } else { weight_decay };
            p.with_grad(|g| {
                p.update_data(|theta| {
                    for i in 0..n {
                        let gi = g.map_or(0.0, |g| g[i] as f64);
                        let m = beta1 * moments.m[i] as f64 + (1.0 - beta1) * gi;
                        let v = beta2 * moments.v[i] as f64 + (1.0 - beta2) * gi * gi;
                        moments.m[i] = m as f32;
                        moments.v[i] = v as f32;
                        let update = (m / bc1) / ((v / bc2).sqrt() + eps);
                        let th = theta[i] as f64;
                        theta[i] = (th - step_lr * (update + wd * th)) as f32;
                    }
                })
            });
        }
        Ok(())
    }
}

/// Linear warmup to `peak` followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupCosine {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupCosine {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let total_steps = total_steps.max(1);
        let warmup_steps = ((warmup_fraction * total_steps as f64).round() as usize).min(total_steps);
        Self {
            peak,
            warmup_steps,
            total_steps,
        }
    }

    /// Learning rate for the 0-based `step`, clamped to `[0, total_steps]`.
    pub fn lr(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return self.peak;
        }
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// `base·(1 − step/total)^power`.
pub fn poly_lr(step: usize, total_steps: usize, base: f64, power: f64) -> f64 {
    let total = total_steps.max(1);
    let frac = step.min(total) as f64 / total as f64;
    base * (1.0 - frac).powf(power)
}
