use std::path::PathBuf;

/// Errors produced by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration was rejected before any work started. The message
    /// lists every violated field, one per line.
    #[error("invalid configuration:\n{0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("partitioning failed: {0}")]
    Partition(String),

    /// Training produced a non-finite value. Carries the round-local context
    /// so sweeps can record which cell failed.
    #[error("training diverged: {context}")]
    Diverged { context: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {detail}")]
    Parse { what: String, detail: String },
}

impl Error {
    /// Helper for building an `InvalidConfig` from a list of violations.
    /// Returns `Ok(())` when the list is empty.
    pub fn check_config(violations: Vec<String>) -> Result<()> {
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations.join("\n")))
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
