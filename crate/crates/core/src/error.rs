use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {found}")]
    Shape { expected: String, found: String },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("token {token} out of range for codebook size {k}")]
    TokenRange { token: usize, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("payload size mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
