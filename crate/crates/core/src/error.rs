//! Error type shared by every module of the crate.

use std::io;

/// Errors produced by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// An invalid configuration value (learning rate, split fraction, grid entry, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Bad input data, e.g. a label outside the class range.
    #[error("data error: {0}")]
    Data(String),

    /// An API was used out of order, e.g. running backward twice on one tape.
    #[error("usage error: {0}")]
    Usage(String),

    /// A tensor container with the wrong magic, version or dtype.
    #[error("format error: {0}")]
    Format(String),

    /// A tensor container whose payload ends early or carries trailing garbage.
    #[error("corrupt tensor file at byte {offset}: {msg}")]
    Corrupt { offset: u64, msg: String },

    /// A loss became NaN or infinite during training.
    #[error("training diverged at round {round}{}: {msg}", client.map(|c| format!(", client {c}")).unwrap_or_default())]
    Divergence {
        round: usize,
        client: Option<usize>,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
