use thiserror::Error;

pub type Result<T, E = DiffError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: operand `{operand}` expected shape {expected}, found {found:?}")]
    Shape {
        op: &'static str,
        operand: &'static str,
        expected: String,
        found: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),
    #[error("{0}: empty input")]
    Empty(&'static str),
}
