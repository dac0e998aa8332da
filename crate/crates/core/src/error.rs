use std::path::PathBuf;

/// Errors raised anywhere in the unlearning stack.
///
/// Variants are grouped by the stage that produces them so the CLI can map
/// them onto distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("empty loss: every label is the ignore index")]
    EmptyLoss,

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("invalid freeze policy: {0}")]
    Policy(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid corpus spec: {0}")]
    Spec(String),

    #[error("invalid phase config: {0}")]
    Phase(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a checkpoint (bad magic bytes)")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported checkpoint version {found} (this build reads {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{path}: integrity check failed: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
