use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: range leg {leg_km:e} km is below {eps_km:e} km")]
    DegenerateGeometry { leg_km: f64, eps_km: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("joint-event enumeration exceeded {limit} events")]
    EnumerationBlowup { limit: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
