use thiserror::Error;

/// Errors raised by the pooling stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input exceeds the desk-scale bound for its order.
    #[error("capacity exceeded: order {order} supports dim <= {max_dim}, got {dim}")]
    Capacity {
        order: usize,
        dim: usize,
        max_dim: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// The odd-order fast path only reaches powers of three.
    #[error("eta {requested} is not a power of 3 (nearest valid value: {nearest})")]
    InvalidOddEta { requested: u32, nearest: u32 },

    #[error("cannot l2-normalize a zero vector")]
    ZeroVector,

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
