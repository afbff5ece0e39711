use thiserror::Error;

/// Errors raised by the solvers and validators.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation (θ outside Θ, λ below its floor, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed numeric input (non-finite values, bad probabilities).
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent configuration (grid/problem mismatch, empty grids, bad flags).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure at stage {stage}, state {state}: {detail}")]
    Numeric {
        stage: usize,
        state: usize,
        detail: String,
    },

    #[error(
        "dynamics left the state box at stage {stage}: state {state:?}, action {action:?}, noise {noise:?}"
    )]
    Dynamics {
        stage: usize,
        state: Vec<f64>,
        action: Vec<f64>,
        noise: Vec<f64>,
    },

    /// Brute-force enumeration or atom propagation exceeded its cap.
    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("unsupported risk family: {0}")]
    UnsupportedFamily(String),
}

impl Error {
    /// True for errors caused by the caller's configuration rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Input(_) | Error::Domain(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
