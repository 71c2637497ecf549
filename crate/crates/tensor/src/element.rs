//! Scalar element types a [`Tensor`](crate::Tensor) can hold.
//!
//! Training state is `f32`. The `f64` instantiation exists so that gradient
//! checks can difference the exact same op code in double precision.

use std::fmt::{Debug, Display};

use num_traits::Float;

pub trait Element: Float + Default + Debug + Display + 'static {
    const NAME: &'static str;

    /// Converts an `f64` literal into this element type.
    fn lit(v: f64) -> Self;

    /// Widens to `f64` for accumulation.
    fn widen(self) -> f64;

    /// Gauss error function.
    fn error_fn(self) -> Self {
        Self::lit(libm::erf(self.widen()))
    }

    /// `c = a·b (+ c)` for row/column strided matrices.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`. Strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        c: &mut [Self],
        c_strides: (usize, usize),
        accumulate: bool,
    );
}

fn span(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_element {
    ($ty:ty, $name:literal, $gemm:path) => {
        impl Element for $ty {
            const NAME: &'static str = $name;

            #[inline]
            fn lit(v: f64) -> Self {
                v as $ty
            }

            #[inline]
            fn widen(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
                c_strides: (usize, usize),
                accumulate: bool,
            ) {
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs buffer too small");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs buffer too small");
                assert!(c.len() >= span(m, n, c_strides), "gemm: output buffer too small");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        for i in 0..m {
                            for j in 0..n {
                                c[i * c_strides.0 + j * c_strides.1] = 0.0;
                            }
                        }
                    }
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_element!(f32, "f32", matrixmultiply::sgemm);
impl_element!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_points() {
        assert_eq!(0.0f64.error_fn(), 0.0);
        assert!((1.0f64.error_fn() - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!(((-1.0f32).error_fn() + 0.842_700_8).abs() < 1e-6);
    }

    #[test]
    fn gemm_transposed_strides() {
        // a = [[1,2],[3,4]] read transposed -> [[1,3],[2,4]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), &mut c, (2, 1), false);
        assert_eq!(c, [1.0, 3.0, 2.0, 4.0]);
        f64::gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), &mut c, (2, 1), true);
        assert_eq!(c, [2.0, 6.0, 4.0, 8.0]);
    }
}
