use thiserror::Error;

/// Crate-wide error type.  Variants mirror the failure modes of the
/// individual pipelines so that scenario reports can name them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("metric is not positive definite: min eigenvalue {0:.3e} at y = {1:?}")]
    NonPositiveMetric(f64, [f64; 2]),

    #[error("unsupported dimensions: p = {p}, q = {q} ({reason})")]
    UnsupportedDimension { p: usize, q: usize, reason: &'static str },

    #[error("evaluation at the zero section: |eta| = {0:.3e} below eta_min = {1:.3e}")]
    EvaluationAtZeroSection(f64, f64),

    #[error("trajectory left the stable band: |eta| = {0:.3e} outside [{1:.3e}, {2:.3e}]")]
    StepUnstable(f64, f64, f64),

    #[error("ODE error estimate {0:.3e} exceeds tolerance {1:.3e}")]
    OdeTolerance(f64, f64),

    #[error("cutoff too small: {0}")]
    CutoffTooSmall(String),

    #[error("cutoff mismatch: {0}")]
    CutoffMismatch(String),

    #[error("probe out of range: {0}")]
    ProbeOutOfRange(String),

    #[error("truncation depth exceeded: requested N = {requested}, depth J = {depth}")]
    TruncationDepthExceeded { requested: usize, depth: usize },

    #[error("transverse principal symbol is not holonomy invariant: {0}")]
    NotHolonomyInvariant(String),

    #[error("block at leaf mode {0:?} is not Hermitian: defect {1:.3e}")]
    NonHermitianBlock([i32; 2], f64),

    #[error("coefficient bundle connection is not skew-adjoint: defect {0:.3e}")]
    NonHermitianConnection(f64),

    #[error("polynomial fit ill-conditioned: condition number {0:.3e}")]
    FitIllConditioned(f64),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("scenario assertion failed: {0}")]
    AssertionFailed(String),

    #[error("linear algebra backend error: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
