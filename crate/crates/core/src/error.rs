use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "capacity exceeded: {spins} spins need 2^{spins} amplitudes x {vectors} vectors = {required_bytes} bytes, budget is {budget_bytes} bytes"
    )]
    Capacity {
        spins: u32,
        vectors: u32,
        required_bytes: u128,
        budget_bytes: u128,
    },

    #[error("chebyshev coefficients not below cutoff by index {limit}; increase the FFT grid beyond {grid}")]
    Resolution { grid: usize, limit: usize },

    #[error("spectral weight {edge_weight:.3e} at the edge of the Nyquist window (+-{nyquist:.3}); reduce the time step")]
    Aliasing { edge_weight: f64, nyquist: f64 },

    #[error("unreliable fit: {0}")]
    UnreliableFit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
