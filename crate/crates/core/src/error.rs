use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate gradient (norm {norm:e} at or below threshold)")]
    DegenerateGradient { norm: f64 },

    #[error("point lies on the singular locus of the analytic shape")]
    SingularPoint,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("empty point set")]
    EmptySet,

    #[error("point set is missing normals")]
    MissingNormals,

    #[error("batch of {requested} exceeds population {available}")]
    BatchTooLarge { requested: usize, available: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no zero crossing in the sampled field")]
    EmptySurface,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
