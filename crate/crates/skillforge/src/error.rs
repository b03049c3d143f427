use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Contract violations on hot paths (shape mismatches, bad indices) panic
/// via `assert!` instead; this enum covers fallible operations: file I/O,
/// checkpoint and config parsing, and training divergence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown domain '{0}' (expected one of nav1, nav2, pickup, break, placement, two_room, complex)")]
    UnknownDomain(String),

    #[error("invalid domain map {path}: {reason}")]
    InvalidMap { path: String, reason: String },

    #[error("training diverged at optimization step {step}: loss = {loss}")]
    TrainingDiverged { step: u64, loss: f64 },

    #[error("cannot sample from an empty replay buffer")]
    EmptyReplay,

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: String, reason: String },

    #[error("checkpoint {path} has unsupported version {found} (expected {expected})")]
    CheckpointVersion {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("config error at {path}:{line}: {reason}")]
    ConfigParse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("invalid config: {0}")]
    ConfigValidation(String),

    #[error("invalid skill manifest {path}: {reason}")]
    SkillManifest { path: String, reason: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// CLI exit code: 1 for configuration mistakes the user can fix by
    /// editing arguments or files, 2 for failures at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::UnknownDomain(_)
            | Error::InvalidMap { .. }
            | Error::MissingFile(_)
            | Error::ConfigParse { .. }
            | Error::ConfigValidation(_)
            | Error::SkillManifest { .. }
            | Error::CheckpointVersion { .. }
            | Error::Usage(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
