use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),

    #[error("segment {id}: {reason}")]
    Validation { id: String, reason: String },

    #[error("segment {id}: blob holds {actual} bytes, expected {expected}")]
    ShapeMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing channels: {}", .0.join(", "))]
    MissingChannels(Vec<String>),

    #[error("no segments of class {0}")]
    EmptyClass(String),

    #[error("segment {0} has no votes")]
    Unlabeled(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("extractor fingerprint mismatch: checkpoint {checkpoint}, requested {requested}")]
    Fingerprint {
        checkpoint: String,
        requested: String,
    },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("training diverged in fold {fold} at epoch {epoch}: {detail}")]
    Diverged {
        fold: usize,
        epoch: usize,
        detail: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failing run.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
