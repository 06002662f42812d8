//! Minimal dense reverse-mode automatic differentiation.
//!
//! The engine covers exactly what the graph models, defenses and explainers
//! in this workspace need: dense `f64` matrices, a recording [`Tape`], a fixed
//! set of differentiable primitives, and an [`AdamState`] optimiser.
//! Adjacency structure enters only as fixed sparse matrices or index lists;
//! it is never differentiated.

mod error;
mod matrix;
mod optim;
mod tape;

pub use error::{AutodiffError, Result};
pub use matrix::{CsrMatrix, Matrix, Shape};
pub use optim::{AdamConfig, AdamState};
pub use tape::{sigmoid, BatchStats, Gradients, Tape, Tensor};
