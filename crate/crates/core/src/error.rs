use thiserror::Error;

/// Errors produced by model construction, solvers and the closed-loop harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("model check failed: {0}")]
    ModelCheck(String),

    #[error("riccati iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    RiccatiDivergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),

    #[error("quadratic program hit the iteration cap ({0})")]
    MaxIterations(usize),

    /// `snapshot` is a text dump of the controller inputs and warm start.
    #[error("controller failed at step {step}: {reason}")]
    Controller { step: usize, reason: String, snapshot: String },

    #[error("plant integration failed at t = {time}: {reason}")]
    Plant { time: f64, reason: String, last_state: Vec<f64> },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
