use std::path::PathBuf;

/// Errors produced by the simulation, fitting, control and analysis layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {pairs} snapshot pairs available, at least {needed} required")]
    InsufficientData { pairs: usize, needed: usize },

    #[error("normal matrix is singular (rank {rank} of {dim}); use a ridge parameter > 0")]
    Singular { rank: usize, dim: usize },

    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),

    #[error("model not stabilizable: Riccati iteration did not converge (last residual {residual:e})")]
    NotStabilizable { residual: f64 },

    #[error("invalid cost specification: {0}")]
    CostSpec(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("malformed trial log: {0}")]
    MalformedLog(String),

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
