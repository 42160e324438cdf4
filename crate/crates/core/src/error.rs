use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid metric space: {0}")]
    InvalidSpace(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("dilation undefined below two points")]
    DilationUndefined,
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),
    #[error("ambient space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("set distance to an empty set")]
    EmptySet,
    #[error("support too large: {size} atoms (limit {limit})")]
    SupportTooLarge { size: usize, limit: usize },
    #[error("instance too large for exact search: {size} points (limit {limit})")]
    SizeLimit { size: usize, limit: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("time window off grid: {0}")]
    WindowOffGrid(String),
    #[error("conductance outside the ellipticity band: {0}")]
    BandViolation(String),
    #[error("invalid Cauchy sequence: {0}")]
    InvalidCauchy(String),
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
