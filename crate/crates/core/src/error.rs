//! Shared error type for the whole toolkit.

/// Everything that can go wrong across analysis, synthesis, simulation and
/// verification.  Variants are grouped so the CLI can map them onto exit
/// codes without inspecting message strings.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A model callable returned a non-finite value at a concrete point.
    #[error("model evaluation failed at t = {t}: {detail}")]
    Evaluation { t: f64, detail: String },

    /// The standing structural hypothesis (sign-definite control-direction
    /// intervals, bounded growth, positive interval lengths) does not hold.
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    /// An interval structure is internally inconsistent.
    #[error("structural inconsistency: {0}")]
    Structural(String),

    #[error("synthesis infeasible: {0}")]
    SynthesisInfeasible(String),

    #[error("periodization failed: {0}")]
    Periodization(String),

    #[error("integration failed at t = {last_t}: {detail}")]
    IntegrationFailure { last_t: f64, detail: String },

    #[error("trajectory diverged (non-finite state) at t = {t}")]
    Divergence { t: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// One or more verification checks did not pass.
    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse category used by the CLI for exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => ErrorCategory::Configuration,
            Error::NumericFailure(_)
            | Error::Evaluation { .. }
            | Error::IntegrationFailure { .. }
            | Error::Divergence { .. }
            | Error::InsufficientData(_) => ErrorCategory::Numeric,
            _ => ErrorCategory::CheckFailure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad user input / configuration.
    Configuration,
    /// The method's hypotheses or a verification check failed.
    CheckFailure,
    /// Numerics broke down (divergence, step underflow, non-finite values).
    Numeric,
}
