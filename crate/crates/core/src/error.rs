use thiserror::Error;

/// Errors raised by the numerical kernels and the file layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate immersion at node {node}: |f_theta| = {speed:.3e}")]
    Degenerate { node: usize, speed: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid metric specification: {0}")]
    Spec(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    /// Carries the last valid nodes, reached at `time`.
    #[error("geodesic flow broke down after t = {time}: {reason}")]
    FlowBreakdown {
        time: f64,
        reason: String,
        last_nodes: Vec<crate::Vec3>,
    },

    #[error("horizontal lift broke down at t = {time}: {reason}")]
    LiftBreakdown { time: f64, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (degeneracy, solver, breakdown) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate { .. }
                | Error::Solver { .. }
                | Error::FlowBreakdown { .. }
                | Error::LiftBreakdown { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
