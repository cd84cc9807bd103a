use std::path::PathBuf;

/// Errors of the IO, training and CLI layers.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] dla_lab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic in record `{record}`")]
    BadMagic { record: String },
    #[error("truncated payload in `{what}`")]
    Truncated { what: String },
    #[error("format version mismatch in `{what}`: expected {expected}, found {found}")]
    VersionMismatch { what: String, expected: u32, found: u32 },
    #[error("malformed `{what}`: {detail}")]
    Malformed { what: String, detail: String },
    #[error("parameter `{name}` mismatch: checkpoint has {found:?}, preset expects {expected:?}")]
    ParamMismatch {
        name: String,
        expected: Option<Vec<usize>>,
        found: Option<Vec<usize>>,
    },
    #[error("{0}")]
    CheckFailed(String),
    #[error("{0}")]
    Usage(String),
}

pub type LabResult<T> = Result<T, LabError>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class printed as `error[class]: message`.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Core(dla_lab_core::Error::NonFinite(_)) => "non-finite",
            Self::Core(dla_lab_core::Error::Config(_)) => "config",
            Self::Core(_) => "compute",
            Self::Io { .. } => "io",
            Self::BadMagic { .. } => "bad-magic",
            Self::Truncated { .. } => "truncated",
            Self::VersionMismatch { .. } => "version-mismatch",
            Self::Malformed { .. } => "malformed",
            Self::ParamMismatch { .. } => "param-mismatch",
            Self::CheckFailed(_) => "check-failed",
            Self::Usage(_) => "usage",
        }
    }

    /// Process exit code: 2 for usage errors, 3 for failed checks, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::CheckFailed(_) => 3,
            _ => 1,
        }
    }
}
