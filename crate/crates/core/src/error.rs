use std::path::PathBuf;

/// Errors raised anywhere in the training laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad shapes, out-of-range hyperparameters,
    /// unknown keys or forbidden mode combinations.
    #[error("configuration error: {0}")]
    Config(String),

    /// A configuration key failed validation.
    #[error("configuration error in `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    /// Caller-supplied data violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A malformed row in a text file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A structurally inconsistent file (wrong width, bad header, bad magic).
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    /// Non-finite values reached the optimizer.
    #[error("training diverged at iteration {iteration}, epoch {epoch}: {message}")]
    Diverged {
        iteration: usize,
        epoch: usize,
        message: String,
    },

    /// An accuracy that has no defined value (e.g. every label masked).
    #[error("undefined metric: {0}")]
    Undefined(String),

    /// Broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn key(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigKey {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Coarse category used for process exit codes and FFI status codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::ConfigKey { .. } => ErrorCategory::Config,
            Error::Input(_) | Error::Undefined(_) => ErrorCategory::Input,
            Error::Parse { .. } | Error::Format { .. } | Error::Serde(_) => ErrorCategory::Format,
            Error::Diverged { .. } => ErrorCategory::Diverged,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Internal(_) => ErrorCategory::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Input,
    Format,
    Diverged,
    Io,
    Internal,
}

impl ErrorCategory {
    /// Process exit code for the CLI. Zero is reserved for success.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Input => 3,
            ErrorCategory::Format => 4,
            ErrorCategory::Diverged => 5,
            ErrorCategory::Io => 6,
            ErrorCategory::Internal => 70,
        }
    }
}
