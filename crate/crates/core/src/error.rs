use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("query point {point:?} lies outside the grid in dimension {dim}")]
    OutOfBounds { point: Vec<f64>, dim: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("uncertainty bounds at {state:?} do not contain the origin ({detail})")]
    BoundsExcludeOrigin { state: Vec<f64>, detail: String },

    #[error("time step {dt} exceeds the CFL limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("non-finite value at node {node} (coordinates {coords:?})")]
    NonFinite { node: usize, coords: Vec<f64> },

    #[error("solver diverged at tau = {tau}: max |V| = {max_abs} exceeds {limit}")]
    Divergence { tau: f64, max_abs: f64, limit: f64 },

    #[error("training of member {member} diverged at epoch {epoch} (loss {loss}); try a smaller learning rate (current {lr})")]
    TrainingDiverged {
        member: usize,
        epoch: usize,
        loss: f64,
        lr: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible experiment setup: {0}")]
    Infeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable identifier used by the CLI for machine-readable failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::BoundsExcludeOrigin { .. } => "bounds_exclude_origin",
            Error::CflViolation { .. } => "cfl_violation",
            Error::NonFinite { .. } => "non_finite",
            Error::Divergence { .. } => "divergence",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::Dimension(_) => "dimension_mismatch",
            Error::Infeasible(_) => "infeasible",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
