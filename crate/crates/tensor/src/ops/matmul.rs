//! Batched matrix product `[.., m, k] · [.., k, n]`.
//!
//! Batch dims must either match exactly or one side must be a plain matrix,
//! in which case it is shared across the other side's batch.

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Batching {
    /// Both sides carry the same batch.
    Paired(usize),
    /// Only the lhs is batched; folded into its row count.
    LhsOnly(usize),
    /// Only the rhs is batched.
    RhsOnly(usize),
}

impl<E: Element> Tensor<E> {
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return shape_err("matmul", format!("operands must be at least 2-d: {sa:?} · {sb:?}"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return shape_err("matmul", format!("inner dims differ: {sa:?} · {sb:?}"));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (batching, batch_shape) = if ba == bb {
            (Batching::Paired(ba.iter().product()), ba.to_vec())
        } else if bb.is_empty() {
            (Batching::LhsOnly(ba.iter().product()), ba.to_vec())
        } else if ba.is_empty() {
            (Batching::RhsOnly(bb.iter().product()), bb.to_vec())
        } else {
            return shape_err("matmul", format!("batch dims differ: {sa:?} · {sb:?}"));
        };
        let mut out_shape = batch_shape;
        out_shape.extend([m, n]);

        let data = {
            let (a, b) = (self.data(), other.data());
            forward(&a, &b, m, k, n, batching)
        };
        Ok(Tensor::from_op(
            "matmul",
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            move |g, inputs, _| {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let ga = inputs[0]
                    .requires_grad()
                    .then(|| grad_lhs(g, &b, m, k, n, batching));
                let gb = inputs[1]
                    .requires_grad()
                    .then(|| grad_rhs(g, &a, m, k, n, batching));
                vec![ga, gb]
            },
        ))
    }
}

fn forward<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, batching: Batching) -> Vec<E> {
    match batching {
        Batching::LhsOnly(batch) => {
            let mut c = vec![E::zero(); batch * m * n];
            E::gemm(batch * m, k, n, a, (k, 1), b, (n, 1), &mut c, (n, 1), false);
            c
        }
        Batching::Paired(batch) => {
            let mut c = vec![E::zero(); batch * m * n];
            for i in 0..batch {
                E::gemm(
                    m,
                    k,
                    n,
                    &a[i * m * k..],
                    (k, 1),
                    &b[i * k * n..],
                    (n, 1),
                    &mut c[i * m * n..],
                    (n, 1),
                    false,
                );
            }
            c
        }
        Batching::RhsOnly(batch) => {
            let mut c = vec![E::zero(); batch * m * n];
            for i in 0..batch {
                E::gemm(m, k, n, a, (k, 1), &b[i * k * n..], (n, 1), &mut c[i * m * n..], (n, 1), false);
            }
            c
        }
    }
}

// dA = G · Bᵀ
fn grad_lhs<E: Element>(g: &[E], b: &[E], m: usize, k: usize, n: usize, batching: Batching) -> Vec<E> {
    match batching {
        Batching::LhsOnly(batch) => {
            let mut ga = vec![E::zero(); batch * m * k];
            E::gemm(batch * m, n, k, g, (n, 1), b, (1, n), &mut ga, (k, 1), false);
            ga
        }
        Batching::Paired(batch) => {
            let mut ga = vec![E::zero(); batch * m * k];
            for i in 0..batch {
                E::gemm(
                    m,
                    n,
                    k,
                    &g[i * m * n..],
                    (n, 1),
                    &b[i * k * n..],
                    (1, n),
                    &mut ga[i * m * k..],
                    (k, 1),
                    false,
                );
            }
            ga
        }
        Batching::RhsOnly(batch) => {
            let mut ga = vec![E::zero(); m * k];
            for i in 0..batch {
                E::gemm(m, n, k, &g[i * m * n..], (n, 1), &b[i * k * n..], (1, n), &mut ga, (k, 1), true);
            }
            ga
        }
    }
}

// dB = Aᵀ · G
fn grad_rhs<E: Element>(g: &[E], a: &[E], m: usize, k: usize, n: usize, batching: Batching) -> Vec<E> {
    match batching {
        Batching::LhsOnly(batch) => {
            let mut gb = vec![E::zero(); k * n];
            let rows = batch * m;
            E::gemm(k, rows, n, a, (1, k), g, (n, 1), &mut gb, (n, 1), false);
            gb
        }
        Batching::Paired(batch) => {
            let mut gb = vec![E::zero(); batch * k * n];
            for i in 0..batch {
                E::gemm(
                    k,
                    m,
                    n,
                    &a[i * m * k..],
                    (1, k),
                    &g[i * m * n..],
                    (n, 1),
                    &mut gb[i * k * n..],
                    (n, 1),
                    false,
                );
            }
            gb
        }
        Batching::RhsOnly(batch) => {
            let mut gb = vec![E::zero(); batch * k * n];
            for i in 0..batch {
                E::gemm(k, m, n, a, (1, k), &g[i * m * n..], (n, 1), &mut gb[i * k * n..], (n, 1), false);
            }
            gb
        }
    }
}
