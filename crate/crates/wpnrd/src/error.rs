//! Crate-wide error type.

use crate::fidelity::PeakModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A constructor or precondition rejected its inputs.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The experiment config failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// The integration step is too coarse for the fastest time constant.
    #[error("time step {dt:.3e} s too coarse; need dt <= {max_dt:.3e} s ({reason})")]
    StepTooCoarse { dt: f64, max_dt: f64, reason: String },

    /// A switch event targeted a wire that is still resistive.
    #[error("event at t={time:.3e} s targets wire {wire} while it is still hot")]
    WireStillHot { time: f64, wire: usize },

    /// Trace analysis could not locate the requested feature.
    #[error("trace analysis failed: {0}")]
    TraceAnalysis(String),

    /// Exact enumeration was requested beyond the supported photon number.
    #[error("photon number {n} exceeds the exact enumeration bound {bound}; use Monte Carlo")]
    EnumerationBound { n: usize, bound: usize },

    /// The iterative fit hit its iteration cap; carries the best fit so far.
    #[error("multi-Gaussian fit did not converge after {iterations} iterations")]
    FitDidNotConverge {
        iterations: usize,
        best: Box<PeakModel>,
        residual_norm: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Exit code the CLI maps this error to (1 = validation, 2 = runtime).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::EnumerationBound { .. } => 1,
            _ => 2,
        }
    }
}
