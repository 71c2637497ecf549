//! Elementwise arithmetic with leading/trailing broadcasting, unary maps and
//! full reductions.

use std::rc::Rc;

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::{numel_of, Tensor};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each linear index of `out`, the linear index it reads in `src`.
pub(crate) fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        let oi = i + rank - src.len();
        strides[oi] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let total = numel_of(out);
    let mut map = Vec::with_capacity(total);
    let mut index = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..rank).rev() {
            index[ax] += 1;
            offset += strides[ax];
            if index[ax] < out[ax] {
                break;
            }
            offset -= strides[ax] * index[ax];
            index[ax] = 0;
        }
    }
    map
}

type IndexMap = Option<Rc<Vec<usize>>>;

#[inline]
fn at(map: &IndexMap, j: usize) -> usize {
    map.as_ref().map_or(j, |m| m[j])
}

impl<E: Element> Tensor<E> {
    fn zip_with<F, GA, GB>(
        &self,
        other: &Tensor<E>,
        name: &'static str,
        f: F,
        grad_a: GA,
        grad_b: GB,
    ) -> Result<Tensor<E>>
    where
        F: Fn(E, E) -> E,
        GA: Fn(E, E, E) -> E + 'static,
        GB: Fn(E, E, E) -> E + 'static,
    {
        let Some(out_shape) = broadcast_shape(self.shape(), other.shape()) else {
            return shape_err(
                name,
                format!("cannot broadcast {:?} with {:?}", self.shape(), other.shape()),
            );
        };
        let map_for = |t: &Tensor<E>| -> IndexMap {
            (t.shape() != out_shape.as_slice())
                .then(|| Rc::new(broadcast_index_map(t.shape(), &out_shape)))
        };
        let (ma, mb) = (map_for(self), map_for(other));
        let n = numel_of(&out_shape);
        let data = {
            let (a, b) = (self.data(), other.data());
            (0..n).map(|j| f(a[at(&ma, j)], b[at(&mb, j)])).collect()
        };
        Ok(Tensor::from_op(
            name,
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            move |g, inputs, _| {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let ga = inputs[0].requires_grad().then(|| {
                    let mut ga = vec![E::zero(); a.len()];
                    for (j, &gj) in g.iter().enumerate() {
                        let (ia, ib) = (at(&ma, j), at(&mb, j));
                        ga[ia] = ga[ia] + grad_a(gj, a[ia], b[ib]);
                    }
                    ga
                });
                let gb = inputs[1].requires_grad().then(|| {
                    let mut gb = vec![E::zero(); b.len()];
                    for (j, &gj) in g.iter().enumerate() {
                        let (ia, ib) = (at(&ma, j), at(&mb, j));
                        gb[ib] = gb[ib] + grad_b(gj, a[ia], b[ib]);
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(other, "add", |a, b| a + b, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(other, "sub", |a, b| a - b, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(other, "mul", |a, b| a * b, |g, _, b| g * b, |g, a, _| g * a)
    }

    pub fn div(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(
            other,
            "div",
            |a, b| a / b,
            |g, _, b| g / b,
            |g, a, b| -g * a / (b * b),
        )
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn map<F, D>(&self, name: &'static str, f: F, df: D) -> Tensor<E>
    where
        F: Fn(E) -> E,
        D: Fn(E, E) -> E + 'static,
    {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            name,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, inputs, out| {
                let x = inputs[0].data();
                let gx = g
                    .iter()
                    .zip(x.iter().zip(out))
                    .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    pub fn add_scalar(&self, c: E) -> Tensor<E> {
        self.map("add_scalar", move |x| x + c, |_, _| E::one())
    }

    pub fn mul_scalar(&self, c: E) -> Tensor<E> {
        self.map("mul_scalar", move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<E> {
        self.map("neg", |x| -x, |_, _| -E::one())
    }

    pub fn square(&self) -> Tensor<E> {
        self.map("square", |x| x * x, |x, _| x + x)
    }

    pub fn exp(&self) -> Tensor<E> {
        self.map("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<E> {
        self.map("ln", |x| x.ln(), |x, _| x.recip())
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        self.map(
            "sigmoid",
            |x| {
                if x >= E::zero() {
                    (E::one() + (-x).exp()).recip()
                } else {
                    let e = x.exp();
                    e / (E::one() + e)
                }
            },
            |_, y| y * (E::one() - y),
        )
    }

    /// Exact GELU, `x·Φ(x)` with the normal CDF from `erf`.
    pub fn gelu(&self) -> Tensor<E> {
        let half = E::lit(0.5);
        let inv_sqrt2 = E::lit(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = E::lit(0.398_942_280_401_432_7);
        self.map(
            "gelu",
            move |x| x * half * (E::one() + (x * inv_sqrt2).error_fn()),
            move |x, _| {
                let cdf = half * (E::one() + (x * inv_sqrt2).error_fn());
                let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                cdf + x * pdf
            },
        )
    }

    pub fn sum(&self) -> Tensor<E> {
        let total: f64 = self.data().iter().map(|v| v.widen()).sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![E::lit(total)],
            Vec::new(),
            vec![self.clone()],
            move |g, _, _| vec![Some(vec![g[0]; n])],
        )
    }

    pub fn mean(&self) -> Tensor<E> {
        let n = self.numel();
        let total: f64 = self.data().iter().map(|v| v.widen()).sum();
        let scale = E::lit(1.0 / n as f64);
        Tensor::from_op(
            "mean",
            vec![E::lit(total / n as f64)],
            Vec::new(),
            vec![self.clone()],
            move |g, _, _| vec![Some(vec![g[0] * scale; n])],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[1, 4, 3], &[2, 4, 3]), Some(vec![2, 4, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 1], &[2, 4, 3]), Some(vec![2, 4, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn index_map_prefix_and_suffix() {
        assert_eq!(broadcast_index_map(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index_map(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::<f64>::param(vec![0.1, 0.2, 0.3], &[3]).unwrap();
        let y = x.add(&b).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        y.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn gelu_reference_values() {
        let x = Tensor::<f64>::from_vec(vec![0.0, 10.0, 1.0, -1.0], &[4]).unwrap();
        let y = x.gelu().to_vec();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 10.0).abs() < 1e-12);
        assert!((y[2] - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((y[3] + 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn mean_and_sum() {
        let x = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 6.0], &[2, 2]).unwrap();
        assert_eq!(x.sum().item(), 12.0);
        assert_eq!(x.mean().item(), 3.0);
    }
}
