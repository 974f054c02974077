//! Minimal dense-tensor arithmetic with reverse-mode differentiation.

mod gradcheck;
mod params;
mod rng;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use params::{ParamId, ParamSet, Parameter};
pub use rng::Rng;
pub use sparse::SparseMatrix;
pub use tape::{Tape, ValueId};
pub use tensor::{
    finite_checks, precision, set_finite_checks, set_precision, with_precision, KernelError,
    Precision, Tensor,
};
