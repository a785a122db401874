//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use params::{Init, Param, ParamSet, ParamVars};
pub use tape::{Gradients, Reduction, Tape, Var};
pub use tensor::{Precision, Real, Tensor};
