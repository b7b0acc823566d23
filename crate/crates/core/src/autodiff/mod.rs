//! Minimal reverse-mode automatic differentiation.

pub mod gradcheck;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use gradcheck::{central_difference_noise, central_differences, compare, grad_check, relative_error, GradCheckReport};
pub use layers::{Bound, DenseParams, GruParams, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{AdError, AdResult, Gradients, Op, Tape, Var, NUMERIC_FLOOR};
pub use tensor::Tensor;
