//! Dense batched arithmetic with forward tangents and a reverse sweep that
//! differentiates through them.

mod dual;
mod fd;
mod layer;
mod matrix;
mod tape;

pub use dual::DualBatch;
pub use fd::{finite_difference_check, finite_difference_check_dense, relative_error, FD_FLOOR};
pub use layer::{effective_weight, ActivationKind, LayerParams, ParamGradients, ParamId};
#[cfg(test)]
pub(crate) use layer::{sigmoid, softplus};
pub use matrix::{gemm, DenseMatrix, Trans};
pub use tape::{activation_forward, linear_forward, reverse, CustomOp, Tape, TapeMode, ValueId};
