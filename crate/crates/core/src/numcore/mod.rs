//! Dense tensors, a recording tape for reverse-mode gradients, Adam, and
//! checkpoint serialization.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{CheckpointData, CheckpointError, Precision};
pub use gradcheck::{finite_diff_check, relative_error, FdOptions, FdReport};
pub use params::{Gradients, Initializer, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("not differentiable: {0}")]
    NonDifferentiable(String),
}
