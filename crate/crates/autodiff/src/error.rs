use thiserror::Error;

use crate::matrix::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Shape, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Shape),
    #[error("{op}: index {index} out of range for {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{0}")]
    Contract(String),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, left: Shape, right: Shape) -> Self {
        Self::Shape { op, left, right }
    }
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
