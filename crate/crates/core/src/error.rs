use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("observation block must contain at least one symbol")]
    EmptyBlock,

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Node doubling still moved the integral by more than the tolerance at the node cap.
    /// `value` is the finest estimate obtained.
    #[error("Fisher quadrature did not converge: relative change {rel_change:e} at {nodes} nodes")]
    QuadratureNotConverged {
        value: f64,
        rel_change: f64,
        nodes: usize,
    },

    #[error("Newton M-step stalled at theta = {theta} (gradient {gradient:e})")]
    NewtonStalled { theta: f64, gradient: f64 },

    #[error("Fisher requirement {gamma_min} exceeds the achievable maximum {fc_max}")]
    Infeasible { gamma_min: f64, fc_max: f64 },
}
