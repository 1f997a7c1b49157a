use thiserror::Error;

/// Errors surfaced by the library. Each variant carries a stable machine code
/// (see [`Error::code`]) that the CLI prints as an error prefix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layout error: {dimension} ({detail})")]
    Layout { dimension: &'static str, detail: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("tuning error: {0}")]
    Tuning(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures while decoding a packed-weight stream.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("truncated stream: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("header/payload length disagreement: header implies {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid header field {field}: {detail}")]
    Header { field: &'static str, detail: String },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "E_PARAM",
            Error::Shape(_) => "E_SHAPE",
            Error::Layout { .. } => "E_LAYOUT",
            Error::Input(_) => "E_INPUT",
            Error::ConfigMismatch(_) => "E_CONFIG",
            Error::Format(FormatError::BadMagic { .. }) => "E_FORMAT_MAGIC",
            Error::Format(FormatError::Version { .. }) => "E_FORMAT_VERSION",
            Error::Format(FormatError::Truncated { .. }) => "E_FORMAT_TRUNCATED",
            Error::Format(FormatError::LengthMismatch { .. }) => "E_FORMAT_LENGTH",
            Error::Format(FormatError::Header { .. }) => "E_FORMAT_HEADER",
            Error::Tuning(_) => "E_TUNE",
            Error::Io(_) => "E_IO",
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn layout(dimension: &'static str, detail: impl Into<String>) -> Self {
        Error::Layout {
            dimension,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
