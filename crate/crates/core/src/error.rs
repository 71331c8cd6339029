use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("divergence at horizon {horizon}: {what}")]
    Divergence { horizon: f64, what: String },
    #[error("restriction to F is not invertible at (t={t}, s={s}): smallest singular value {sigma_min:e}")]
    Invertibility { t: f64, s: f64, sigma_min: f64 },
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("({s}, {xi:?}) lies outside the manifold grid")]
    Extrapolation { s: f64, xi: Vec<f64> },
    #[error("{what} did not converge after {iterations} iterations (empirical ratio {ratio:.4})")]
    NonConvergence { what: String, iterations: usize, ratio: f64 },
    #[error("tail bound {residual:e} still above tolerance at horizon {horizon}")]
    Truncation { residual: f64, horizon: f64 },
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
