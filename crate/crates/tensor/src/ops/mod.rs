mod arith;
mod matmul;
mod nn;
mod shape;
mod spatial;

pub use nn::{L2_NORMALIZE_EPS, LAYER_NORM_EPS};
pub use spatial::ConvTransposeSpec;
