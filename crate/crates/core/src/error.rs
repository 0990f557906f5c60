use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied values have the wrong shape or are not finite.
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("asset error: {0}")]
    Asset(String),
    #[error("config error: {0}")]
    Config(String),
    /// A parameter-track line that failed to parse; `line` is 1-based.
    #[error("track line {line}: {message}")]
    Track { line: usize, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Container decoding failures. Each corruption mode has its own variant so
/// callers (and the CLI exit codes) can tell them apart.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },
    #[error("unsupported container version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated {context}: needed {needed} bytes, {available} available")]
    Truncated {
        context: String,
        needed: u64,
        available: u64,
    },
    #[error("checksum mismatch in chunk {chunk:?}")]
    Checksum { chunk: String },
    #[error("malformed metadata: {0}")]
    Metadata(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
