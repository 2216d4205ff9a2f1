use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("resolution {0} is not a power of two >= 16")]
    InvalidResolution(usize),

    #[error("resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(usize, usize),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("function left the cone: {0}")]
    ConeMembership(String),

    #[error("not a probability density: {0}")]
    InvalidDensity(String),

    #[error("coupling diffeomorphism violated: min(1 + t A') = {min_derivative:.3e} at t = {t}")]
    DiffeoViolation { t: f64, min_derivative: f64 },

    #[error("{context}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        context: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("linear response system is singular at t = {t} (pivot ratio {pivot_ratio:.3e})")]
    SingularSystem { t: f64, pivot_ratio: f64 },

    #[error("Lasota-Yorke constants inadmissible at t = {t}: sigma = {sigma:?}")]
    Inadmissible { t: f64, sigma: [f64; 4] },

    #[error("map is not uniformly expanding: {0}")]
    NotExpanding(String),

    #[error("jet mismatch: {0}")]
    Jet(String),

    #[error("invalid config: {key}: {message}")]
    Config { key: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DiffeoViolation { .. }
                | Error::NonConvergence { .. }
                | Error::SingularSystem { .. }
                | Error::Inadmissible { .. }
                | Error::ConeMembership(_)
                | Error::NotExpanding(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
