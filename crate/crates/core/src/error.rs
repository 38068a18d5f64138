use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by the library. Each variant names one contract violation
/// or numerical breakdown; callers match on them to decide what to report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state outside the chart: |y| = {norm} >= r = {radius}")]
    OutsideChart { norm: f64, radius: f64 },

    #[error("trajectory left the chart at t = {time}")]
    ChartEscape { time: f64 },

    #[error("step size underflow at t = {time}")]
    StepSizeUnderflow { time: f64 },

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("degenerate signal")]
    DegenerateSignal,

    #[error("signal looks chaotic: residual {residual} exceeds 0.1")]
    ChaoticSignal { residual: f64 },

    #[error("diophantine scan over {points} lattice points exceeds the exhaustive limit")]
    ScanTooLarge { points: u128 },

    #[error("small divisor |k.omega| = {divisor:e} at k = {k:?}")]
    SmallDivisor { k: Vec<i64>, divisor: f64 },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("series has a secular (non-periodic) angle part")]
    NonPeriodic,

    #[error("Kolmogorov iteration diverged at step {iteration} (residual {residual:e})")]
    Divergence { iteration: usize, residual: f64 },

    #[error("frequency vector is not Diophantine at the requested scale (L = {l_lower:e}, worst k = {worst_k:?})")]
    NotDiophantine { l_lower: f64, worst_k: Vec<i64> },

    #[error("non-degeneracy fails: det = {det:e}")]
    Degenerate { det: f64 },

    #[error("integrals do not commute: |{{F_{i},F_{j}}}| = {bracket:e}")]
    NotIntegrable { i: usize, j: usize, bracket: f64 },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("Newton iteration did not converge (residual {residual:e})")]
    NewtonFailure { residual: f64 },

    #[error("unknown example system '{0}'")]
    UnknownSystem(String),

    #[error("point at the singular locus of the chart: {0}")]
    SingularPoint(String),
}
