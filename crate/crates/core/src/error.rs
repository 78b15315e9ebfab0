use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid function: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sectional variation norm {norm} exceeds budget {budget}")]
    NormBudgetExceeded { norm: f64, budget: f64 },

    #[error("scale M - |f(0)| vanishes for a nonconstant function (M = {budget}, f(0) = {f0})")]
    DegenerateScale { budget: f64, f0: f64 },

    #[error("empty data set")]
    EmptyData,

    #[error("coordinate {value} outside [0, 1] (point {point}, axis {axis})")]
    DomainError { point: usize, axis: usize, value: f64 },

    #[error("unknown loss family `{0}` (expected square, logistic or square-subexp)")]
    UnknownFamily(String),

    #[error("unknown noise family `{0}` (expected laplace, gaussian or centered-exponential)")]
    UnknownNoise(String),

    #[error("reference is not a risk minimizer: risk {risk} < reference risk {reference_risk} - 3 x {std_error}")]
    NotAMinimizer { risk: f64, reference_risk: f64, std_error: f64 },

    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("epsilon {0} must lie in (0, 1]")]
    InvalidEpsilon(f64),

    #[error("brute-force budget exceeded: {atoms} atoms > {budget}")]
    TooLarge { atoms: usize, budget: usize },

    #[error("adaptive quadrature did not reach relative tolerance {tolerance} (estimate {estimate}, error {error})")]
    QuadratureFailure { estimate: f64, error: f64, tolerance: f64 },

    #[error("t * g = {0} exceeds 700; the Bernstein norm would overflow")]
    Overflow(f64),

    #[error("sub-exponential certification failed at lambda = {lambda}: MGF {mgf} > bound {bound} (+ slack {slack})")]
    CertificationFailure { lambda: f64, mgf: f64, bound: f64, slack: f64 },

    #[error("audit violation in `{inequality}`: lhs {lhs} > rhs {rhs} + slack {slack}")]
    AuditViolation { inequality: String, lhs: f64, rhs: f64, slack: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in JSON error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::InvalidInput(_) => "InvalidInput",
            Error::NormBudgetExceeded { .. } => "NormBudgetExceeded",
            Error::DegenerateScale { .. } => "DegenerateScale",
            Error::EmptyData => "EmptyData",
            Error::DomainError { .. } => "DomainError",
            Error::UnknownFamily(_) => "UnknownFamily",
            Error::UnknownNoise(_) => "UnknownNoise",
            Error::NotAMinimizer { .. } => "NotAMinimizer",
            Error::NonFinite { .. } => "NonFinite",
            Error::InvalidEpsilon(_) => "InvalidEpsilon",
            Error::TooLarge { .. } => "TooLarge",
            Error::QuadratureFailure { .. } => "QuadratureFailure",
            Error::Overflow(_) => "Overflow",
            Error::CertificationFailure { .. } => "CertificationFailure",
            Error::AuditViolation { .. } => "AuditViolation",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
