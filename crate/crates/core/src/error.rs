use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the crate can report. Each variant maps to a stable
/// machine-readable code via [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("descriptor error: {0}")]
    Descriptor(String),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed JSON: {0}")]
    MalformedJson(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("value out of range for `{key}`: {message}")]
    OutOfRange { key: String, message: String },

    #[error("bad magic bytes {0:?}, expected \"PSAW\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {found} (max supported {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("malformed container: {0}")]
    MalformedContainer(String),

    #[error("cannot bind `{name}`: {message}")]
    BindMismatch { name: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable code used in CLI output and tests.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "E_SHAPE",
            Error::Config(_) => "E_CONFIG",
            Error::Usage(_) => "E_USAGE",
            Error::Descriptor(_) => "E_DESCRIPTOR",
            Error::UnknownName(_) => "E_UNKNOWN_NAME",
            Error::DegenerateGrid(_) => "E_DEGENERATE_GRID",
            Error::NonFinite(_) => "E_NON_FINITE",
            Error::MalformedJson(_) => "E_MALFORMED_JSON",
            Error::UnknownKey(_) => "E_UNKNOWN_KEY",
            Error::OutOfRange { .. } => "E_OUT_OF_RANGE",
            Error::BadMagic(_) => "E_BAD_MAGIC",
            Error::UnsupportedVersion { .. } => "E_UNSUPPORTED_VERSION",
            Error::Truncated(_) => "E_TRUNCATED",
            Error::MalformedContainer(_) => "E_MALFORMED_CONTAINER",
            Error::BindMismatch { .. } => "E_BIND_MISMATCH",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
