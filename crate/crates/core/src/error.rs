use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid potential parameters: {0}")]
    InvalidPotential(String),

    #[error("coincident particles {i} and {j} inside the interaction range")]
    CoincidentPoints { i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("range condition violated: b = {b} is not below {bound} (= c(Λ_{dim})·a)")]
    RangeViolation { dim: usize, b: f64, bound: f64 },

    #[error("empty crystal: {0}")]
    EmptyCrystal(String),

    #[error("invalid construction: {0}")]
    InvalidConstruction(String),

    #[error("join overlap has affine dimension {overlap_dim}, need at least {required}")]
    JoinDeficient { overlap_dim: usize, required: usize },

    #[error("crystal condition violated by {} pair(s)", .0.len())]
    CrystalViolation(Vec<PairViolation>),

    #[error("crystal must be centered (|Σz_i| = {0:e})")]
    NotCentered(f64),

    #[error("not an infinitesimal isometry (residual {0:e})")]
    NotInfinitesimalIsometry(f64),

    #[error("eigen-solver failure: {0}")]
    EigenFailure(String),

    #[error("degenerate fit: cross-moment has rank deficiency (singular values {0:?})")]
    DegenerateFit(Vec<f64>),

    #[error("operator on so(d) is not invertible (condition estimate {0:e})")]
    NonInvertible(f64),

    #[error("particle index {index} out of range for {len} particles")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid SDE configuration: {0}")]
    InvalidSdeConfig(String),

    #[error("integration failure at micro step {step}: {reason}")]
    IntegrationFailure {
        step: u64,
        reason: String,
        last_good: Vec<f64>,
    },

    #[error("cooling schedule undefined: {0}")]
    ScheduleUndefined(String),

    #[error("theta path under-sampled at increment {index} (‖θ_k⁻¹θ_k+1 − I‖ = {norm:.3})")]
    UnderSampled { index: usize, norm: f64 },

    #[error("degenerate diffusion: moment pair ({alpha},{beta}) sums to {sum:e}")]
    DegenerateDiffusion { alpha: usize, beta: usize, sum: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration invalid: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A pair of particles whose distance is neither `a` nor beyond the range `b`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PairViolation {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

pub type Result<T> = std::result::Result<T, Error>;
