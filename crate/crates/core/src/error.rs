use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "fourth-order tensor is singular or ill-conditioned (condition estimate {condition:.3e})"
    )]
    SingularMatrix { condition: f64 },

    #[error("Norton rate overflow: overstress ratio {ratio:.6} raised to 1/m = {exponent} exceeds the cap")]
    RateOverflow { ratio: f64, exponent: f64 },

    #[error("yield stress {yield_stress:.6e} Pa is not positive at accumulated plastic strain {gamma:.6e}")]
    NonPositiveYield { gamma: f64, yield_stress: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Newton-Raphson diverged: residual {residual:.3e} after {iterations} iterations")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error(
        "Krylov solver stagnated: relative residual {residual:.3e} after {iterations} iterations"
    )]
    KrylovStagnation { iterations: usize, residual: f64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("malformed data: {0}")]
    MalformedBody(String),

    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown phase id {0}")]
    UnknownPhase(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("at pixel (x = {x}, y = {y}): {source}")]
    AtPixel {
        x: usize,
        y: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Solver,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_pixel(self, x: usize, y: usize) -> Self {
        Error::AtPixel {
            x,
            y,
            source: Box::new(self),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Strips step/pixel context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPixel { source, .. } | Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self.root() {
            Error::Config(_)
            | Error::MalformedHeader(_)
            | Error::MalformedBody(_)
            | Error::DimensionMismatch { .. }
            | Error::UnknownPhase(_) => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Solver,
        }
    }
}
