//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap, reference-counted handle. Ops executed while
//! gradient recording is enabled keep references to their inputs; calling
//! [`Tensor::backward`] on a scalar walks that record in reverse creation
//! order and accumulates gradients into every leaf created with
//! [`Tensor::param`].
//!
//! ```
//! use lgvit_tensor::Tensor;
//!
//! let x = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
//! x.square().sum().backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
//! ```

mod element;
mod error;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{ConvTransposeSpec, L2_NORMALIZE_EPS, LAYER_NORM_EPS};
pub use tape::Tape;
pub use tensor::{is_grad_enabled, no_grad, BackwardFn, Tensor};
