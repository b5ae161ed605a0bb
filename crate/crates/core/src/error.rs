use thiserror::Error;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid convolution vector: {0}")]
    InvalidConvolution(String),

    #[error("convolution vector is not admissible: alpha* = {alpha_star} >= |alpha_0| = {alpha0_abs}")]
    NotAdmissible { alpha_star: f64, alpha0_abs: f64 },

    #[error("Toeplitz transform is numerically singular (condition estimate {condition:.3e})")]
    SingularTransform { condition: f64 },

    #[error("index mismatch: expected {expected} entries, got {got}")]
    IndexMismatch { expected: usize, got: usize },

    #[error("density `{0}` has no weak derivative in L^1")]
    NotDifferentiable(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("problem size {n} exceeds the cap of {cap}")]
    SizeOverflow { n: usize, cap: usize },

    #[error("eigensolver did not converge")]
    ConvergenceFailure,

    #[error("energy {energy} is within {distance:.3e} of an eigenvalue")]
    EnergyResonant { energy: f64, distance: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
