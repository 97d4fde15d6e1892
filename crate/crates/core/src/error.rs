use std::path::PathBuf;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("point {point}: coordinate {value} is outside the finite FP16 range")]
    Range { point: usize, value: f32 },

    #[error("accumulator overflow at ({row}, {col})")]
    Overflow { row: usize, col: usize },

    #[error("invalid tile configuration: {0}")]
    Config(String),

    #[error("calibration failed: {message} (achievable selectivity range [{lo_s}, {hi_s}])")]
    Calibration { message: String, lo_s: f64, hi_s: f64 },

    #[error("statistics undefined: no pairs appear in both result sets")]
    EmptyIntersection,

    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit status classes used by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Argument,
    Format,
    Compute,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Argument => 2,
            ErrorClass::Format => 3,
            ErrorClass::Compute => 4,
            ErrorClass::Io => 5,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::DatasetMismatch(_) => {
                ErrorClass::Argument
            }
            Error::Format { .. } | Error::Range { .. } => ErrorClass::Format,
            Error::Overflow { .. } | Error::Calibration { .. } | Error::EmptyIntersection => {
                ErrorClass::Compute
            }
            Error::Io { .. } => ErrorClass::Io,
        }
    }
}
