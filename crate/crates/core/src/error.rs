use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum ArzError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("solver blow-up at node {node}, t = {t:.3} s: {reason}")]
    BlowUp { node: usize, t: f64, reason: String },

    #[error("boundary infeasible at {side} (t = {t:.3} s): {reason}")]
    BoundaryInfeasible {
        side: &'static str,
        t: f64,
        reason: String,
    },

    #[error("kernel iteration did not converge after {iterations} iterations (residual {residual:e})")]
    KernelConvergence { iterations: usize, residual: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<ArzError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ArzError {
    /// True when the error (possibly wrapped with a step index) is a numerical blow-up
    /// or an infeasible boundary solve.
    pub fn is_numerical_failure(&self) -> bool {
        match self {
            ArzError::BlowUp { .. } | ArzError::BoundaryInfeasible { .. } | ArzError::State(_) => {
                true
            }
            ArzError::AtStep { source, .. } => source.is_numerical_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ArzError>;
