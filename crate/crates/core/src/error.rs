use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("payload never reaches the target plane (discriminant {0:.3e})")]
    NoCrossing(f64),
    #[error("ill-conditioned linear system: {0}")]
    Conditioning(String),
    #[error("time {t} outside trajectory span [0, {total}]")]
    OutOfRange { t: f64, total: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
