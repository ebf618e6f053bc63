use thiserror::Error;

/// Errors shared across the pipeline modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("sampled momentum Hessian is not positive definite (min eigenvalue {min_eig:.3e})")]
    SampledNonConvex { min_eig: f64 },
    #[error("no root for the shell equation H(q, w*theta) = E; point outside the well?")]
    NoRoot,
    #[error("degenerate boundary: |grad V| = {norm:.3e} below tolerance")]
    DegenerateBoundary { norm: f64 },
    #[error("degenerate momentum: <dH/dp, p> = {value:.3e} is not positive")]
    DegenerateMomentum { value: f64 },
    #[error("degenerate conormal")]
    DegenerateConormal,
    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),
    #[error("integrator step failure at t = {t:.6e}")]
    StepFailure { t: f64 },
    #[error("trajectory escapes the closed well immediately")]
    ImmediateEscape,
    #[error("point is outside the certified collar")]
    OutsideCollar,
    #[error("no epsilon level passed the second-derivative audit")]
    NoValidEpsilon,
    #[error("bound violated at a sample: margin {margin:.3e}")]
    BoundViolation { margin: f64 },
    #[error("empty sample set")]
    EmptySamples,
    #[error("quadrature did not converge: {0}")]
    NonConvergentQuadrature(String),
    #[error("zero-length curve")]
    ZeroLength,
    #[error("minimization stalled (best value {best:.6e})")]
    MinimizationStall { best: f64 },
    #[error("certification failed: {0}")]
    CertificationFailure(String),
    #[error("requested level is above the sampled range of psi")]
    EmptyRegion,
    #[error("geodesic escaped the domain before the requested length")]
    EscapedDomain,
    #[error("no exit through the level set within the length budget")]
    NoExit,
    #[error("chord and boundary minimizer velocities are not parallel (angle {angle:.3e} rad)")]
    ParallelismFailure { angle: f64 },
    #[error("operation requires the natural family")]
    WrongFamily,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("operation only supported for n = 2 (got n = {0})")]
    UnsupportedDimension(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
