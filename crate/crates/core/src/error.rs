use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value {value} outside of allowed range [{lo}, {hi}] for {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("training diverged at epoch {epoch}, step {step} (last good epoch: {last_good_epoch:?})")]
    Divergence {
        epoch: usize,
        step: u64,
        last_good_epoch: Option<usize>,
    },
    #[error("degenerate target normalizer for mean {mean}")]
    DegenerateTarget { mean: f64 },
    #[error("group marginal carries no recoverable parameter")]
    Unrecoverable,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
