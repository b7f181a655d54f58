use thiserror::Error;

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for {op} with extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op} needs at least one input")]
    Empty { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
}
