//! Pure data-movement ops: reshape, permute, narrow, concat, gather.

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::tensor::{numel_of, Tensor};

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<E: Element> Tensor<E> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        if numel_of(shape) != self.numel() {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            );
        }
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            |g, _, _| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<E>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return arg_err("permute", format!("{perm:?} is not a permutation of rank {rank}"));
        }
        let in_shape = self.shape().to_vec();
        let in_strides = strides_of(&in_shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        // src index of every output element
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut index = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..n {
            map.push(offset);
            for ax in (0..rank).rev() {
                index[ax] += 1;
                offset += src_strides[ax];
                if index[ax] < out_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * index[ax];
                index[ax] = 0;
            }
        }
        let data = {
            let src = self.data();
            map.iter().map(|&i| src[i]).collect()
        };
        Ok(Tensor::from_op(
            "permute",
            data,
            out_shape,
            vec![self.clone()],
            move |g, _, _| {
                let mut gx = vec![E::zero(); g.len()];
                for (j, &i) in map.iter().enumerate() {
                    gx[i] = g[j];
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<E>> {
        let rank = self.rank();
        if rank < 2 {
            return Err(TensorError::InvalidAxis { axis: 1, rank });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 1, rank - 2);
        self.permute(&perm)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let extent = self.shape()[axis];
        if start + len > extent || len == 0 {
            return arg_err(
                "narrow",
                format!("range {start}..{} outside axis extent {extent}", start + len),
            );
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let data = {
            let src = self.data();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                data.extend_from_slice(&src[base..base + len * inner]);
            }
            data
        };
        let in_numel = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            data,
            out_shape,
            vec![self.clone()],
            move |g, _, _| {
                let mut gx = vec![E::zero(); in_numel];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    let src = o * len * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        let Some(first) = parts.first() else {
            return arg_err("concat", "no inputs");
        };
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        for p in parts {
            let compatible = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err(
                    "concat",
                    format!("{:?} incompatible with {:?} on axis {axis}", p.shape(), first.shape()),
                );
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &ext) in parts.iter().zip(&extents) {
                let src = p.data();
                data.extend_from_slice(&src[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        Ok(Tensor::from_op(
            "concat",
            data,
            out_shape,
            parts.to_vec(),
            move |g, _, _| {
                let mut grads: Vec<Vec<E>> =
                    extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
                let mut cursor = 0;
                for _ in 0..outer {
                    for (gp, &ext) in grads.iter_mut().zip(&extents) {
                        gp.extend_from_slice(&g[cursor..cursor + ext * inner]);
                        cursor += ext * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            },
        ))
    }

    /// `out[j] = self.flat[indices[j]]`, reshaped to `shape`.
    ///
    /// Repeated indices are allowed; their gradients add.
    pub fn gather(&self, indices: Vec<usize>, shape: &[usize]) -> Result<Tensor<E>> {
        if numel_of(shape) != indices.len() {
            return shape_err(
                "gather",
                format!("{} indices cannot fill shape {shape:?}", indices.len()),
            );
        }
        let n = self.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return arg_err("gather", format!("index {bad} out of range for {n} elements"));
        }
        let data = {
            let src = self.data();
            indices.iter().map(|&i| src[i]).collect()
        };
        Ok(Tensor::from_op(
            "gather",
            data,
            shape.to_vec(),
            vec![self.clone()],
            move |g, _, _| {
                let mut gx = vec![E::zero(); n];
                for (&i, &gj) in indices.iter().zip(g) {
                    gx[i] = gx[i] + gj;
                }
                vec![Some(gx)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f64> {
        let n = numel_of(shape);
        Tensor::from_vec((0..n).map(|v| v as f64).collect(), shape).unwrap()
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let x = iota(&[2, 3]);
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn permute_rank3() {
        let x = iota(&[2, 3, 4]);
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let (xd, yd) = (x.to_vec(), y.to_vec());
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(yd[c * 6 + a * 3 + b], xd[a * 12 + b * 4 + c]);
                }
            }
        }
    }

    #[test]
    fn narrow_and_concat_roundtrip() {
        let x = iota(&[2, 5, 3]);
        let a = x.narrow(1, 0, 2).unwrap();
        let b = x.narrow(1, 2, 3).unwrap();
        let y = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        assert!(x.narrow(1, 4, 2).is_err());
    }

    #[test]
    fn gather_repeats_accumulate() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let y = x.gather(vec![0, 0, 2], &[3]).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 1.0, 3.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 0.0, 1.0]);
    }
}
