//! Crate-wide error type.
//!
//! Variants are grouped so the CLI can map them onto distinct exit codes:
//! configuration problems, data/file problems, and numeric aborts.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An operation was called outside its contract (empty bag, non-scalar
    /// backward root, missing loss parts, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A feature or checkpoint file does not start with the expected magic.
    #[error("{path}: bad magic (not a {expected} file)")]
    BadMagic { path: String, expected: &'static str },

    /// A binary payload ended before the header said it would.
    #[error("{path}: truncated payload ({detail})")]
    Truncated { path: String, detail: String },

    /// Container version is newer than this build understands.
    #[error("{path}: unsupported format version {found} (expected <= {supported})")]
    VersionMismatch {
        path: String,
        found: u16,
        supported: u16,
    },

    /// Feature dimension recorded in a file disagrees with the model config.
    #[error("feature dimension mismatch: file has D={found}, expected D={expected}")]
    DimMismatch { expected: usize, found: usize },

    /// Malformed manifest line.
    #[error("{path}:{line}: manifest error: {detail}")]
    Manifest {
        path: String,
        line: usize,
        detail: String,
    },

    /// A metric is undefined for the given ground truth (single class, no
    /// positives, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training hit a non-finite loss; carries a diagnostic dump of the
    /// offending pair.
    #[error(
        "numeric abort at step {step} (abnormal={abnormal_id}, normal={normal_id}): {detail}"
    )]
    NumericAbort {
        step: usize,
        abnormal_id: String,
        normal_id: String,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Exit-code class used by the CLI: 2 = config, 3 = data, 4 = numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Shape { .. } => 2,
            Error::NumericAbort { .. } => 4,
            _ => 3,
        }
    }
}
