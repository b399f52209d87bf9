//! Minimal reverse-mode automatic differentiation over dense NCHW arrays.

mod adam;
pub(crate) mod kernels;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use kernels::gaussian_taps;
pub use params::{kaiming_uniform, ParamSet};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::{NodeId, Tensor};
