use thiserror::Error;

/// Errors raised by the simulation and processing chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("LFSR initial state is all-zero and would never leave the stuck state")]
    StuckState,
    #[error("capture contains no frames")]
    EmptyCapture,
    #[error("at least 2 usable peaks are required, found {found}")]
    InsufficientPeaks { found: usize },
    #[error("fit needs at least 3 arrivals at 2 distinct positions, got {points} arrivals")]
    Underdetermined { points: usize },
    #[error("degenerate fit geometry: {0}")]
    DegenerateGeometry(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
