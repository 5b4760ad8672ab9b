use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by graph construction, simulation and the numerical checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("invalid lattice parameters: {0}")]
    InvalidLattice(String),

    #[error("window radius {window} does not contain the darning region (need at least {required})")]
    WindowTooSmall { window: f64, required: f64 },

    #[error("darned lattice is disconnected: {reached} of {total} vertices reachable from vertex 0")]
    Disconnected { reached: usize, total: usize },

    #[error("vertex {0} does not exist")]
    InvalidVertex(u32),

    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("uniformization needs {needed} terms, above the configured cap of {cap}; raise the cap or shorten t")]
    TruncationCap { needed: usize, cap: usize },

    #[error("test function is not constant on a neighbourhood of the darning region")]
    NotClassG,

    #[error("escape fraction {fraction:.4} at level {level} exceeds threshold {threshold}; enlarge the window")]
    EscapeThreshold { level: u32, fraction: f64, threshold: f64 },

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("report contains a non-finite value at {0}")]
    NonFinite(String),

    #[error("malformed graph file: {0}")]
    GraphFormat(String),

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
