use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum SflabError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vector is not horizontal at the given point (residual {residual:.3e})")]
    NotHorizontal { residual: f64 },

    #[error("Hörmander condition undecided: rank {rank} < {dimension} after bracket depth {depth}")]
    HoermanderUndecided {
        rank: usize,
        dimension: usize,
        depth: usize,
    },

    #[error("chart is not privileged: coordinate {coordinate} has order {order:?}, expected weight {weight}")]
    NotPrivileged {
        coordinate: usize,
        order: Option<usize>,
        weight: u32,
    },

    #[error("field {field} has weighted order below -1 in component {component}")]
    NotApproximable { field: usize, component: usize },

    #[error("nilpotency step mismatch: declared {declared}, found {found}")]
    StepMismatch { declared: u32, found: u32 },

    #[error("trajectory left the chart box at t = {t:.4}")]
    OutOfChart { t: f64 },

    #[error("distance solver did not converge (best endpoint error {endpoint_error:.3e})")]
    NoConvergence { endpoint_error: f64 },

    #[error("invalid ball-measure curve: {0}")]
    InvalidCurve(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SflabError>;
