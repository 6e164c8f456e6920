use std::path::PathBuf;

/// Errors produced by the smoe library.
#[derive(Debug, thiserror::Error)]
pub enum SmoeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("image of {width}x{height} is smaller than {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt image: {0}")]
    CorruptImage(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },

    #[error("malformed header line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("{0} unexpected bytes after the declared payload")]
    TrailingBytes(usize),

    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),

    #[error("tensor {name} contains a non-finite value at index {index}")]
    NonFinite { name: String, index: usize },

    #[error("malformed model file line {line}: {reason}")]
    ModelFile { line: usize, reason: String },

    #[error("estimation failed for window at ({x}, {y}): {source}")]
    Window {
        x: usize,
        y: usize,
        #[source]
        source: Box<SmoeError>,
    },

    #[error("unknown estimator {0:?}")]
    UnknownEstimator(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SmoeError> = std::result::Result<T, E>;

impl SmoeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SmoeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SmoeError::InvalidArgument(msg.into())
    }
}
