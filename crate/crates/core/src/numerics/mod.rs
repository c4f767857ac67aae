//! Dense double-precision linear algebra with a reverse-mode tape.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use graph::{gelu, Gradients, Graph, NodeId, ParamSet};
pub use matrix::{dot, layer_norm, matmul, norm, softmax_rows, Matrix};
