use thiserror::Error;

use crate::forward::PicardReport;
use crate::inverse::RecoveryReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fractional order {0}")]
    InvalidOrder(f64),

    #[error("Mittag-Leffler E_{{{alpha},{sigma}}}({z}) did not meet tolerance in any regime")]
    NonConvergent { alpha: f64, sigma: f64, z: f64 },

    #[error("kernel t^(alpha-1) E(-lambda t^alpha) is singular at t = 0")]
    SingularAtZero,

    #[error("Laplace tail bound {bound:e} exceeds tolerance {tol:e}")]
    TailNotNegligible { bound: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("point {x} lies outside the open interval (0, {length})")]
    OutOfDomain { x: f64, length: f64 },

    #[error("resonant modes {0:?} carry a nonzero datum; the nonlocal problem is not solvable")]
    ResonanceDetected(Vec<usize>),

    #[error("scalar nonlocal problem is resonant: |E(-Lambda T^alpha) - kappa| = {denominator:e}")]
    ResonantScalar { denominator: f64 },

    #[error("Picard iteration did not converge after {} iterations", .0.iterations)]
    NotConverged(Box<PicardReport>),

    #[error("shooting did not converge (mode {mode:?}; None means the outer fixed point)")]
    ShootingDiverged { mode: Option<usize> },

    #[error("observation violates |h(t)| >= h0: min |h| = {min_abs:e}, h0 = {h0:e}")]
    ObservationTooSmall { min_abs: f64, h0: f64 },

    #[error("observation violates h(T) = kappa h(0) + phi(x0): residual {residual:e}, tolerance {tol:e}")]
    IncompatibleObservation { residual: f64, tol: f64 },

    #[error("traced observation crosses zero; the coefficient cannot be recovered")]
    DatumCrossesZero,

    #[error("coefficient recovery did not converge after {} outer iterations", .0.outer_iterations)]
    RecoveryNotConverged(Box<RecoveryReport>),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit status for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Io(_) => 2,
            Error::NotConverged(_)
            | Error::RecoveryNotConverged(_)
            | Error::ShootingDiverged { .. }
            | Error::NonConvergent { .. } => 3,
            _ => 4,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
