use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor operations, layer construction and training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("cannot construct network: {0}")]
    Construction(String),
    #[error("degenerate (zero-norm) rows at indices {0:?}")]
    DegenerateRows(Vec<usize>),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },
    #[error("no gradient recorded for parameter {0}")]
    MissingGrad(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
