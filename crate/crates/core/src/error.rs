use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    /// Query DSL syntax error at a byte offset.
    #[error("syntax error at offset {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown labels: {}", .0.join(", "))]
    UnknownLabels(Vec<String>),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("unsupported query structure {shape}")]
    UnsupportedStructure { shape: String },

    #[error("sampling exhausted for {query_type} on {split}: {failures} instance(s) failed")]
    SamplingExhausted {
        query_type: String,
        split: String,
        failures: usize,
    },

    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch for `{name}`: stored {stored:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: [usize; 2],
        expected: [usize; 2],
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Errors caused by bad user input rather than internal failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numeric(_) | Error::Contract(_) | Error::Shape { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Syntax { .. } => "syntax",
            Error::UnknownLabels(_) => "unknown_labels",
            Error::InvalidQuery(_) => "invalid_query",
            Error::UnsupportedStructure { .. } => "unsupported_structure",
            Error::SamplingExhausted { .. } => "sampling_exhausted",
            Error::Shape { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::Input(_) => "input",
            Error::Format(_) => "format",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
        }
    }
}
