use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not fit the operation.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("corrupt stream: {0}")]
    Corrupt(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 I/O, 3 format, 4 corruption, 5 configuration mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Checksum { .. }
            | Error::Malformed { .. } => 3,
            Error::Corrupt(_) => 4,
            Error::MissingTensor(_)
            | Error::UnexpectedTensor(_)
            | Error::TensorShape { .. }
            | Error::ConfigMismatch(_) => 5,
            Error::Shape { .. } | Error::InvalidArgument(_) => 1,
        }
    }
}
