//! Parameterised layers shared by the encoder and the heads.

use lgvit_tensor::{Element, Tensor, LAYER_NORM_EPS};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

/// `N(0, std²)` resampled until it lands within two standard deviations.
pub fn trunc_normal<E: Element, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<E> {
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break E::lit(v);
            }
        })
        .collect();
    Tensor::param(data, shape).expect("shape has positive extents")
}

/// Anything owning named trainable tensors.
pub trait Module<E: Element> {
    /// Pushes `(prefix + local name, handle)` for every parameter.
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>);

    fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.named_params("").iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<E: Element = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> Linear<E> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: trunc_normal(rng, &[fan_in, fan_out], INIT_STD),
            bias: Tensor::zeros(&[fan_out]).into_param(),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]).into_param(),
            bias: Tensor::zeros(&[fan_out]).into_param(),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(1)
    }

    /// Applies to the last axis of `x`.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(x.matmul(&self.weight)?.add(&self.bias)?)
    }
}

impl<E: Element> Module<E> for Linear<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<E: Element = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> LayerNorm<E> {
    pub fn new(dim: usize) -> Self {
        Self {
            weight: Tensor::ones(&[dim]).into_param(),
            bias: Tensor::zeros(&[dim]).into_param(),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(x.layer_norm(&self.weight, &self.bias, LAYER_NORM_EPS)?)
    }
}

impl<E: Element> Module<E> for LayerNorm<E> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunc_normal_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f32> = trunc_normal(&mut rng, &[64, 64], INIT_STD);
        let v = t.to_vec();
        assert!(v.iter().all(|x| x.abs() <= 0.04 + 1e-7));
        let mean: f64 = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        let var: f64 = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 2e-3);
        // a 2σ-truncated normal has std ≈ 0.88σ
        assert!((var.sqrt() - 0.88 * INIT_STD).abs() < 1e-3, "std {}", var.sqrt());
    }

    #[test]
    fn linear_maps_last_axis() {
        let lin = Linear::<f64> {
            weight: Tensor::param(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap(),
            bias: Tensor::param(vec![0.5, -0.5], &[2]).unwrap(),
        };
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 2, 3]).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.to_vec(), vec![4.5, 4.5, 10.5, 10.5]);
        let names: Vec<_> = lin.named_params("fc").into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["fc.weight", "fc.bias"]);
    }
}
