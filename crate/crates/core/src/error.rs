use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument: bad dimension, violated precondition, non-physical input.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unstable drift: spectral abscissa {abscissa:.6e} is not negative")]
    UnstableDrift { abscissa: f64 },

    #[error("steady state not reached after t = {time:.6e}: residual {residual:.6e}")]
    SteadyStateNotReached { time: f64, residual: f64 },

    #[error("{solver} did not converge: residual {residual:.6e}")]
    NotConverged { solver: &'static str, residual: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("closed loop unstable: eigenvalue {re:.6e} {im:+.6e}i")]
    ClosedLoopUnstable { re: f64, im: f64 },

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
