//! Dense `f64` tensors with a reverse-mode gradient tape.

mod check;
mod param;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_params};
pub use param::{backward, sgd_step, Binding, Parameter};
pub use tape::{cross_entropy_from_logits, Gradients, Tape, Var};
pub use tensor::{sigmoid, softplus, Tensor};
