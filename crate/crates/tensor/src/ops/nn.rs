//! Fused neural-network primitives with hand-written backward passes.
//!
//! Reductions accumulate in `f64` regardless of the element type.

use std::rc::Rc;

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const L2_NORMALIZE_EPS: f64 = 1e-12;

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// `ln Σ exp` over one strided lane plus its max, both in f64.
fn lane_lse<E: Element>(x: &[E], base: usize, extent: usize, stride: usize) -> (f64, f64) {
    let mut max = f64::NEG_INFINITY;
    for a in 0..extent {
        max = max.max(x[base + a * stride].widen());
    }
    let mut sum = 0.0;
    for a in 0..extent {
        sum += (x[base + a * stride].widen() - max).exp();
    }
    (max, sum.ln())
}

impl<E: Element> Tensor<E> {
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let (outer, extent, inner) = split_axis(self.shape(), axis)?;
        let mut out = vec![E::zero(); self.numel()];
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * extent * inner + i;
                    let (max, lse) = lane_lse(&x, base, extent, inner);
                    for a in 0..extent {
                        let idx = base + a * inner;
                        out[idx] = E::lit((x[idx].widen() - max - lse).exp());
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            "softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _, y| {
                let mut gx = vec![E::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * extent * inner + i;
                        let dot: f64 = (0..extent)
                            .map(|a| (g[base + a * inner] * y[base + a * inner]).widen())
                            .sum();
                        let dot = E::lit(dot);
                        for a in 0..extent {
                            let idx = base + a * inner;
                            gx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let (outer, extent, inner) = split_axis(self.shape(), axis)?;
        let mut out = vec![E::zero(); self.numel()];
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * extent * inner + i;
                    let (max, lse) = lane_lse(&x, base, extent, inner);
                    for a in 0..extent {
                        let idx = base + a * inner;
                        out[idx] = E::lit(x[idx].widen() - max - lse);
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            "log_softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _, y| {
                let mut gx = vec![E::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * extent * inner + i;
                        let total: f64 = (0..extent).map(|a| g[base + a * inner].widen()).sum();
                        for a in 0..extent {
                            let idx = base + a * inner;
                            gx[idx] = E::lit(g[idx].widen() - y[idx].widen().exp() * total);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor<E>, beta: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
        let Some(&d) = self.shape().last() else {
            return shape_err("layer_norm", "scalar input");
        };
        if gamma.shape() != [d] || beta.shape() != [d] {
            return shape_err(
                "layer_norm",
                format!("affine params {:?}/{:?} for last dim {d}", gamma.shape(), beta.shape()),
            );
        }
        let rows = self.numel() / d;
        let mut xhat = vec![E::zero(); self.numel()];
        let mut rstd = vec![0.0f64; rows];
        let mut out = vec![E::zero(); self.numel()];
        {
            let (x, gm, bt) = (self.data(), gamma.data(), beta.data());
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().map(|v| v.widen()).sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v.widen() - mean).powi(2)).sum::<f64>() / d as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for c in 0..d {
                    let h = (row[c].widen() - mean) * rs;
                    xhat[r * d + c] = E::lit(h);
                    out[r * d + c] = E::lit(h * gm[c].widen() + bt[c].widen());
                }
            }
        }
        Ok(Tensor::from_op(
            "layer_norm",
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, inputs, _| {
                let gm = inputs[1].data();
                let gx = inputs[0].requires_grad().then(|| {
                    let mut gx = vec![E::zero(); g.len()];
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..d {
                            let dh = (g[r * d + c] * gm[c]).widen();
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + c].widen();
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for c in 0..d {
                            let dh = (g[r * d + c] * gm[c]).widen();
                            let h = xhat[r * d + c].widen();
                            gx[r * d + c] = E::lit(rstd[r] * (dh - mean_dh - h * mean_dh_h));
                        }
                    }
                    gx
                });
                let needs_affine = inputs[1].requires_grad() || inputs[2].requires_grad();
                let (gg, gb) = if needs_affine {
                    let mut gg = vec![0.0f64; d];
                    let mut gb = vec![0.0f64; d];
                    for r in 0..rows {
                        for c in 0..d {
                            let gi = g[r * d + c].widen();
                            gg[c] += gi * xhat[r * d + c].widen();
                            gb[c] += gi;
                        }
                    }
                    let cast = |v: Vec<f64>| v.into_iter().map(E::lit).collect::<Vec<_>>();
                    (Some(cast(gg)), Some(cast(gb)))
                } else {
                    (None, None)
                };
                vec![gx, gg, gb]
            },
        ))
    }

    /// Scales each last-axis vector to unit norm; vectors shorter than `eps`
    /// are divided by `eps` instead.
    pub fn l2_normalize(&self, eps: f64) -> Result<Tensor<E>> {
        let Some(&d) = self.shape().last() else {
            return shape_err("l2_normalize", "scalar input");
        };
        let rows = self.numel() / d;
        let mut denom = vec![0.0f64; rows];
        let mut out = vec![E::zero(); self.numel()];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let norm = row.iter().map(|v| v.widen().powi(2)).sum::<f64>().sqrt();
                denom[r] = norm.max(eps);
                for c in 0..d {
                    out[r * d + c] = E::lit(row[c].widen() / denom[r]);
                }
            }
        }
        Ok(Tensor::from_op(
            "l2_normalize",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _, y| {
                let mut gx = vec![E::zero(); g.len()];
                for r in 0..rows {
                    let range = r * d..(r + 1) * d;
                    let inv = 1.0 / denom[r];
                    if denom[r] > eps {
                        let dot: f64 = g[range.clone()]
                            .iter()
                            .zip(&y[range.clone()])
                            .map(|(a, b)| (*a * *b).widen())
                            .sum();
                        for c in range {
                            gx[c] = E::lit((g[c].widen() - y[c].widen() * dot) * inv);
                        }
                    } else {
                        for c in range {
                            gx[c] = E::lit(g[c].widen() * inv);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(self, axis=1)`.
    ///
    /// `self` is `[B, C, ...]`; `targets` holds one class index per `(b, ...)`
    /// position in row-major order. Positions equal to `ignore_index` are
    /// skipped.
    pub fn cross_entropy(&self, targets: &[usize], ignore_index: Option<usize>) -> Result<Tensor<E>> {
        if self.rank() < 2 {
            return shape_err("cross_entropy", format!("logits must be [B, C, ...], got {:?}", self.shape()));
        }
        let (outer, classes, inner) = split_axis(self.shape(), 1)?;
        if targets.len() != outer * inner {
            return shape_err(
                "cross_entropy",
                format!("{} targets for logits {:?}", targets.len(), self.shape()),
            );
        }
        if let Some(&bad) = targets
            .iter()
            .find(|&&t| t >= classes && Some(t) != ignore_index)
        {
            return Err(TensorError::InvalidTarget { target: bad, classes });
        }
        let targets: Rc<Vec<usize>> = Rc::new(targets.to_vec());
        let valid = targets.iter().filter(|&&t| Some(t) != ignore_index).count();
        if valid == 0 {
            return arg_err("cross_entropy", "every target is ignored");
        }
        let mut lse = vec![0.0f64; outer * inner];
        let mut total = 0.0f64;
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * classes * inner + i;
                    let (max, l) = lane_lse(&x, base, classes, inner);
                    lse[o * inner + i] = max + l;
                    let t = targets[o * inner + i];
                    if Some(t) != ignore_index {
                        total += max + l - x[base + t * inner].widen();
                    }
                }
            }
        }
        let n_valid = valid as f64;
        Ok(Tensor::from_op(
            "cross_entropy",
            vec![E::lit(total / n_valid)],
            Vec::new(),
            vec![self.clone()],
            move |g, inputs, _| {
                let x = inputs[0].data();
                let scale = g[0].widen() / n_valid;
                let mut gx = vec![E::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let t = targets[o * inner + i];
                        if Some(t) == ignore_index {
                            continue;
                        }
                        let base = o * classes * inner + i;
                        let l = lse[o * inner + i];
                        for c in 0..classes {
                            let idx = base + c * inner;
                            let p = (x[idx].widen() - l).exp();
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gx[idx] = E::lit(scale * (p - onehot));
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}
