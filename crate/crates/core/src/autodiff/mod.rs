//! Dense float-64 tensors with tape-based reverse-mode differentiation,
//! finite-difference gradient checking, Adam, and a checkpoint container.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_many, grad_check_params, GradCheckOptions, GradCheckReport};
pub use params::{glorot_uniform, Bound, Params};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;
