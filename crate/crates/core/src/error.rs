use alloc::string::String;

/// Errors raised by the estimator and simulator.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input to `vee` was not skew-symmetric.
    #[error("matrix is not skew-symmetric (|S + S^T| = {asymmetry:e})")]
    NotSkewSymmetric {
        /// Frobenius norm of `S + S^T`.
        asymmetry: f64,
    },
    /// A matrix failed the orthonormality or determinant checks.
    #[error("matrix is not a proper rotation (orthonormality defect {defect:e}, det {det})")]
    NotARotation {
        /// Max-abs entry of `M^T M - I`.
        defect: f64,
        /// Determinant of the matrix.
        det: f64,
    },
    /// The logarithm is undefined in closed form this close to a half turn.
    #[error("rotation angle {angle} rad is within 1e-6 of pi; logarithm is near-singular")]
    LogNearPi {
        /// Rotation angle of the input.
        angle: f64,
    },
    /// A point projects with (near) zero or negative depth.
    #[error("degenerate depth {depth:e} m in projection")]
    DegenerateDepth {
        /// The offending depth `z`.
        depth: f64,
    },
    /// A measurement's landmark has degenerate depth at the current estimate.
    #[error("frame {frame}, landmark {landmark}: degenerate depth {depth:e} m")]
    MeasurementDepth {
        /// One-based keyframe index.
        frame: usize,
        /// One-based landmark id.
        landmark: usize,
        /// Predicted depth.
        depth: f64,
    },
    /// A vector or matrix had the wrong size.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension {
        /// Expected length.
        expected: usize,
        /// Supplied length.
        actual: usize,
    },
    /// Window length cannot support the observability count.
    #[error("invalid window length {0}")]
    InvalidWindow(usize),
    /// The KKT (or normal-equation) matrix is rank deficient.
    #[error("linear system is singular (rank deficiency {deficiency})")]
    SingularSystem {
        /// Dimension minus numerical rank.
        deficiency: usize,
    },
    /// A problem, trajectory or noise description violates its invariants.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Unknown initialization preset.
    #[error("unknown initialization preset `{0}`")]
    UnknownPreset(String),
}

/// Crate-wide result alias.
pub type Result<T, E = Error> = core::result::Result<T, E>;
