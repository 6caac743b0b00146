use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("malformed {what} at byte {pos}: {detail}")]
    Format {
        what: &'static str,
        pos: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("codec: {0}")]
    Codec(String),

    #[error("checksum mismatch in {what}: stored {stored:08x}, computed {computed:08x}")]
    Checksum {
        what: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, pos: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            pos,
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Format { .. } => "format",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NonFinite(_) => "non-finite",
            Error::Codec(_) => "codec",
            Error::Checksum { .. } => "checksum",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::Io(_) => "io",
        }
    }
}
