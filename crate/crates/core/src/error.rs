use thiserror::Error;

/// Errors raised by the geometry kernel and the construction built on it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis is singular (gram determinant {det:e})")]
    SingularBasis { det: f64 },
    #[error("metric is not positive definite at {at}")]
    MetricNotPositive { at: String },
    #[error("degenerate tangent plane")]
    DegeneratePlane,
    #[error("integrator step underflow")]
    StepUnderflow,
    #[error("chart transition failed at {at}")]
    ChartTransition { at: String },
    #[error("logarithm did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("target at coordinate distance {distance} lies beyond the working radius {radius}")]
    BeyondWorkingRadius { distance: f64, radius: f64 },
    #[error("boundary Jacobi system is singular (conjugate points)")]
    ConjugatePoints,
    #[error("point lies outside the chart domain (distance {distance}, radius {radius})")]
    OutsideDomain { distance: f64, radius: f64 },
    #[error("net is invalid: {0}")]
    InvalidNet(String),
    #[error("empty partition support at {at}")]
    EmptySupport { at: String },
    #[error("instance generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("karcher iteration did not converge in {iterations} iterations (update {update:e})")]
    KarcherDiverged { iterations: usize, update: f64 },
    #[error("input too large: {0}")]
    TooLarge(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;
