use std::path::PathBuf;

/// Error type shared by all pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes (expected \"QTNS\")")]
    BadMagic,

    #[error("unsupported tensor format version {0}")]
    BadVersion(u32),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("zero-sized dimension rejected")]
    ZeroDim,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target acceleration {target} infeasible on {ny}x{nx} grid")]
    InfeasibleAcceleration { target: f64, ny: usize, nx: usize },

    #[error("conjugate gradient diverged (NaN residual) at iteration {0}")]
    CgDiverged(usize),

    #[error("training diverged (non-finite loss) at step {0}")]
    TrainingDiverged(usize),

    #[error("model is untrained: {0}")]
    Untrained(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
