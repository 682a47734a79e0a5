use thiserror::Error;

/// Errors raised by the balancing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The receive filter nulls the desired signal, so `v† R' v = 0`.
    /// Indices are zero-based; the message prints them one-based.
    #[error("degenerate stream (user {}, stream {}): desired signal is nulled", .user + 1, .stream + 1)]
    DegenerateStream { user: usize, stream: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("targets are infeasible: spectral radius {rho} >= 1")]
    Infeasible { rho: f64 },

    #[error("malformed record: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
