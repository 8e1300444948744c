//! Minimal reverse-mode differentiation over dense `f64` arrays.

mod array;
mod gradcheck;
mod graph;

pub use array::Array;
pub use gradcheck::{grad_check, relative_error, DEFAULT_STEP};
pub use graph::{softmax_rows, Gradients, Graph, Var, LOG_FLOOR};
