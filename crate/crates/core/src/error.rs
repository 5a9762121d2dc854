use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("spectral measure is not Hermitian: atom at ({0}, {1}) has no mirror of equal mass")]
    NonHermitian(f64, f64),
    #[error("spectral measure has total mass {0}, expected 1")]
    MassNotOne(f64),
    #[error("invalid kernel derivatives: K''(0) = {k2}, K''''(0) = {k4}")]
    InvalidDerivatives { k2: f64, k4: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("frequency grid undersamples the spectral density: {0}")]
    ResolutionTooCoarse(String),
    #[error("quadrature failed to reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    QuadratureFailure { tolerance: f64, estimate: f64 },
    #[error("Morse census identity violated at level {level}: {detail}")]
    IdentityViolation { level: f64, detail: String },
    #[error("level {0} was not queried when the sweep was run")]
    MissingLevel(f64),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
