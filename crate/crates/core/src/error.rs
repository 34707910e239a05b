//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a structural invariant (bad record, empty dataset, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A feature vector has the wrong length for the model or dataset.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The required mean shift cannot be achieved by any feature vector.
    #[error("required mean shift {r} outside the admissible range (0, {r_max}]")]
    ShiftOutOfRange { r: f64, r_max: f64 },

    /// Bracket expansion never produced a sign change; the shift sits at the
    /// open end of its admissible range.
    #[error("no sign change found while bracketing the root (shift at the open boundary of its range)")]
    RootBracketFailed,

    /// The linear constraint excludes the entire feature box.
    #[error("the constraint halfspace excludes the entire feature box; query is infeasible")]
    InfeasibleRegion,

    /// The sampling oracle found no feasible point.
    #[error("no feasible point among {n_samples} samples")]
    NoFeasibleSample { n_samples: u64 },

    /// An objective evaluation produced NaN or infinity.
    #[error("objective returned a non-finite value")]
    NonFiniteObjective,

    /// Sampling in the ball requires a search region with a radius.
    #[error("search region has no radius; a feasible anchor point is required first")]
    MissingRadius,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
