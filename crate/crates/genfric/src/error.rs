//! Crate-wide error type.

/// Errors reported by the library. Numerical non-convergence of the dual
/// solver is *not* an error — it is flagged on [`crate::dual::DualSolution`]
/// so callers can decide how to degrade.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("system must contain at least one oscillator")]
    EmptySystem,

    #[error("eigenfrequencies must be positive and finite, got omega[{index}] = {value}")]
    BadFrequency { index: usize, value: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("{what} is undefined at the zero state")]
    ZeroState { what: &'static str },

    #[error("empty input vector")]
    EmptyInput,

    #[error("gradient request at z = 0: the subdifferential there is the whole dual unit ball")]
    GradientAtZero,

    #[error(
        "resonance search space has {cells:.3e} lattice points, above the cap {cap:.3e}; \
         lower the bound or raise the cap"
    )]
    SearchSpaceTooLarge { cells: f64, cap: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("epsilon ladder must be strictly decreasing, positive, with at least 3 rungs")]
    BadLadder,

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("canonical diagnostics require a smooth smoother (tanh-like), not saturation")]
    SmootherNotSmooth,

    #[error("Hessian finite difference failed near degenerate block {block}")]
    HessianDegenerate { block: usize },

    #[error("dual solver did not converge (residual {residual:.3e} after {iterations} iterations)")]
    DualSolverFailed { residual: f64, iterations: u32 },

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
