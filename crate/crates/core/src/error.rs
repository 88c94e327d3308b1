use std::io;

use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Each variant maps onto one process exit code, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checksum mismatch: frame carries {expected:#010x}, payload hashes to {actual:#010x}")]
    Corruption { expected: u32, actual: u32 },

    #[error("stream ended mid-frame ({have} of {need} bytes)")]
    Truncated { have: usize, need: usize },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("connection error: {0}")]
    Connection(String),

    #[error("round synchronization error: {0}")]
    RoundSync(String),

    #[error("timed out after {0:.1}s waiting for {1}")]
    Timeout(f64, String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// 2 usage, 3 data, 4 protocol/connection, 5 round synchronization.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Shape(_) | Error::Csv(_) => 3,
            Error::Aggregation(_)
            | Error::Protocol(_)
            | Error::Corruption { .. }
            | Error::Truncated { .. }
            | Error::Encoding(_)
            | Error::Connection(_)
            | Error::Io(_)
            | Error::Json(_) => 4,
            Error::RoundSync(_) | Error::Timeout(..) => 5,
        }
    }

    pub(crate) fn from_io_in_stream(err: io::Error) -> Error {
        use io::ErrorKind::*;
        match err.kind() {
            ConnectionReset | ConnectionAborted | BrokenPipe | NotConnected | ConnectionRefused
            | UnexpectedEof => Error::Connection(err.to_string()),
            _ => Error::Io(err),
        }
    }
}
