use thiserror::Error;

/// Errors raised by the tensor kernels, the decomposition routines and the
/// streaming driver.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value encountered at ALS iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("rank-deficient system for mode {mode}: numerical rank {rank} < {required} columns")]
    RankDeficient { mode: usize, rank: usize, required: usize },

    #[error(
        "too few stacked rows for mode {mode}: p*Q = {rows} < {dim}; the replica bound requires p >= {required_p}"
    )]
    ReplicaBound {
        mode: usize,
        rows: usize,
        dim: usize,
        required_p: usize,
    },

    #[error("identifiability bound violated: {0}")]
    BoundViolation(String),

    #[error("recovery residual {residual:.3e} for mode {mode} exceeds {threshold:.0e}")]
    ResidualExceeded { mode: usize, residual: f64, threshold: f64 },

    #[error("factor alignment failed: {0}")]
    Alignment(String),

    #[error("batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("corrupt payload: {0}")]
    Corrupt(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure came from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::RankDeficient { .. }
            | Error::Degenerate(_)
            | Error::ResidualExceeded { .. }
            | Error::Alignment(_) => true,
            Error::Batch { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Whether the failure came from reading or writing files.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) | Error::Csv(_) | Error::Corrupt(_) | Error::Version { .. } => true,
            Error::Parse(_) => true,
            Error::Batch { source, .. } => source.is_io(),
            _ => false,
        }
    }

    pub(crate) fn in_batch(self, batch: usize) -> Error {
        Error::Batch {
            batch,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
