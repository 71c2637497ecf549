//! Shared oracles and fixtures for the integration suites.

#![allow(dead_code)]

use lgvit_core::augmentation::AugPolicy;
use lgvit_core::contrastive::{ContrastiveConfig, ProjectedFeatures};
use lgvit_core::data::{render_sample, Sample, SyntheticShapesSpec};
use lgvit_core::engine::{PretrainConfig, TrainConfig};
use lgvit_core::rng::{stream_rng, Stream};
use lgvit_core::vit::VitConfig;
use lgvit_tensor::{Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Converts a library result into the tensor crate's error type so library
/// calls can run inside `grad_check` closures.
pub fn lift<T>(r: lgvit_core::Result<T>) -> lgvit_tensor::Result<T> {
    r.map_err(|e| match e {
        lgvit_core::Error::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "test",
            detail: other.to_string(),
        },
    })
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(uniform(rng, n, -1.0, 1.0), shape).unwrap()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn unit_vectors(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| unit(uniform(rng, dim, -1.0, 1.0))).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-ln(e^{a·p/τ} / (e^{a·p/τ} + Σ e^{a·n/τ}))`, written out with a shifted
/// log-sum-exp.
pub fn info_nce_scalar(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let pos = dot(anchor, positive) / tau;
    let logits: Vec<f64> = std::iter::once(pos)
        .chain(negatives.iter().map(|n| dot(anchor, n) / tau))
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - pos
}

/// Dense loss from nested vectors: for every image `b` and patch `i`, the
/// anchor is view A's global feature of `b`, the positive is view B's patch
/// `i` of `b`, and the negatives are every view-B patch of every other image.
pub fn brute_dense_loss(global_a: &[Vec<f64>], patches_b: &[Vec<Vec<f64>>], tau: f64) -> f64 {
    let b = global_a.len();
    let n = patches_b[0].len();
    let mut total = 0.0;
    for img in 0..b {
        let mut negatives = Vec::new();
        for (other, patches) in patches_b.iter().enumerate() {
            if other != img {
                negatives.extend(patches.iter().cloned());
            }
        }
        for i in 0..n {
            total += info_nce_scalar(&global_a[img], &patches_b[img][i], &negatives, tau);
        }
    }
    total / (b * n) as f64
}

pub fn features(global: &[Vec<f64>], patches: &[Vec<Vec<f64>>]) -> ProjectedFeatures<f64> {
    let (b, n, p) = (global.len(), patches[0].len(), global[0].len());
    ProjectedFeatures {
        global: Tensor::from_vec(global.concat(), &[b, p]).unwrap(),
        patches: Tensor::from_vec(patches.iter().flat_map(|x| x.concat()).collect(), &[b, n, p]).unwrap(),
    }
}

/// Random unit-norm projected features for both views.
pub fn random_views(
    rng: &mut ChaCha8Rng,
    b: usize,
    n: usize,
    p: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let ga = unit_vectors(rng, b, p);
    let pa = (0..b).map(|_| unit_vectors(rng, n, p)).collect();
    let gb = unit_vectors(rng, b, p);
    let pb = (0..b).map(|_| unit_vectors(rng, n, p)).collect();
    (ga, pa, gb, pb)
}

pub fn shapes_spec(count: usize, seed: u64) -> SyntheticShapesSpec {
    SyntheticShapesSpec {
        count,
        seed,
        ..Default::default()
    }
}

/// Renders samples in memory with the same per-index streams the generator uses.
pub fn render(spec: &SyntheticShapesSpec, tag: u64) -> Vec<Sample> {
    (0..spec.count)
        .map(|i| render_sample(spec, &mut stream_rng(spec.seed, Stream::Generate, &[tag, i as u64])))
        .collect()
}

/// Micro pretraining setup used by the smoke and transfer runs.
pub fn micro_pretrain(seed: u64, epochs: usize) -> PretrainConfig {
    PretrainConfig {
        vit: VitConfig::micro(),
        contrastive: ContrastiveConfig::default(),
        augment: AugPolicy::micro(32),
        train: TrainConfig {
            base_lr: 1e-3,
            batch_size: 32,
            epochs,
            warmup_fraction: 0.05,
            weight_decay: 0.05,
            seed,
            lr_reference_batch: 128,
        },
    }
}

/// Scalar Adam with decoupled decay, step by step as usually written down.
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn new() -> Self {
        Self { m: 0.0, v: 0.0, t: 0 }
    }

    pub fn update(&mut self, theta: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let v_hat = self.v / (1.0 - b2.powi(self.t));
        theta - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta)
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
