use thiserror::Error;

/// Crate-wide error type. Numerical routines return `Result` instead of
/// panicking so the CLI can turn failures into nonzero exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dilatation bound k = {k} outside [0, 1)")]
    DilatationBound { k: f64 },

    #[error("iteration diverged or stalled: residual {residual:.3e} after {iterations} iterations")]
    Diverged { residual: f64, iterations: usize },

    #[error("point {z} outside the evaluation domain")]
    OutOfDomain { z: String },

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Jacobian below threshold at {z}: |df| = {value:.3e}")]
    DegenerateJacobian { z: String, value: f64 },

    #[error("numerical inverse failed for target {w}: best defect {defect:.3e}")]
    InverseFailed { w: String, defect: f64 },

    #[error("least-squares fit ill-posed: {0}")]
    FitIllPosed(String),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
