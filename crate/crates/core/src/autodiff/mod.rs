//! Dense-tensor reverse-mode differentiation, parameter storage, Adam and a
//! finite-difference gradient checker.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use optim::{clip_grad_norm, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, ReduceKind, Tape, Unary, Var};
pub use tensor::Tensor;
