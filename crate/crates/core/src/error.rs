use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by tensor arithmetic and the model/kernel entry points.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on an extent.
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Operand has the wrong number of axes.
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// Shape/buffer pair is not a valid tensor.
    InvalidShape { shape: Vec<usize>, len: usize },
    /// Index outside the tensor extents.
    Index { index: Vec<usize>, shape: Vec<usize> },
    /// Width not divisible into heads.
    Layout { d_model: usize, heads: usize },
    /// Bad hyper-parameter (non-positive eps, zero tile, ...).
    Config(String),
    /// A non-finite value appeared at the given flat coordinate.
    Numeric { what: &'static str, index: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, lhs, rhs } => {
                write!(f, "{op}: dimension mismatch between {lhs:?} and {rhs:?}")
            }
            Error::Rank { op, expected, got } => {
                write!(f, "{op}: expected rank {expected}, got rank {got}")
            }
            Error::InvalidShape { shape, len } => {
                write!(f, "shape {shape:?} is invalid for a buffer of {len} elements")
            }
            Error::Index { index, shape } => {
                write!(f, "index {index:?} out of bounds for shape {shape:?}")
            }
            Error::Layout { d_model, heads } => {
                write!(f, "d_model {d_model} is not divisible into {heads} heads")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Numeric { what, index } => {
                write!(f, "{what}: non-finite value at coordinate {index}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
