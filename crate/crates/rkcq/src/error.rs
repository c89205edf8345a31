use thiserror::Error;

/// Errors produced by the numerical kernels and experiment drivers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown method `{0}` (expected one of {1})")]
    UnknownMethod(String, String),

    #[error("invalid tableau `{name}`: {reason}")]
    InvalidTableau { name: String, reason: String },

    #[error("matrix dimensions {0}x{1} incompatible with {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("non-finite entry in matrix data")]
    NonFiniteEntry,

    #[error("singular or near-singular matrix (pivot magnitude {pivot:.3e})")]
    Singular { pivot: f64 },

    #[error("eigenvalue iteration did not converge within {0} sweeps")]
    EigNonConvergence(usize),

    #[error("matrix is defective to working precision (eigenvector condition {cond:.3e})")]
    Defective { cond: f64 },

    #[error("FFT length {0} is not a power of two")]
    FftLength(usize),

    #[error("transfer-function pole hit at contour frequency index {freq}")]
    PoleOnContour { freq: usize },

    #[error(
        "delta(z) is defective at contour frequency {freq} (eigenvector condition {cond:.3e}) \
         and the transfer function provides no resolvent fallback"
    )]
    DefectiveSymbol { freq: usize, cond: f64 },

    #[error("evaluation at a pole of delta(z): 1 - r_inf * z vanishes at z = {z}")]
    DeltaPole { z: num_complex::Complex64 },

    #[error(
        "imaginary residue {residue:.3e} of a real-data result exceeds the reality tolerance; \
         the transfer function may not satisfy F(conj s) = conj F(s)"
    )]
    RealityViolation { residue: f64 },

    #[error("stage system is singular; try a smaller step size than k = {k}")]
    SingularStageSystem { k: f64 },

    #[error("method `{0}` is not stiffly accurate, which this operation requires")]
    NotStifflyAccurate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("convergence report flagged invalid: {0}")]
    InvalidReport(String),

    #[error("special-function argument out of range: {0}")]
    SpecialFunction(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
