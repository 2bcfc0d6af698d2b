use thiserror::Error;

/// Errors raised by the monitoring library.
///
/// Variants fall into two families: invalid input (bad parameters, malformed
/// files) and numerical failure (no root, no convergence). The CLI maps them
/// onto distinct exit codes via [`Error::is_numeric`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("maximum likelihood estimate undefined: {failures} failures with zero cumulative intensity and no cap")]
    UndefinedMle { failures: u64 },

    #[error("degenerate event probability {p} for patient `{patient}`")]
    DegenerateProbability { patient: String, p: f64 },

    #[error("no ARL approximation exists for a hazard ratio of 1")]
    NoApproximation,

    #[error("ARL root not found within {t_max} days")]
    HorizonExceeded { t_max: f64 },

    #[error("insufficient replicates: alpha * N = {value:.2} < 5")]
    InsufficientReplicates { value: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("Cox model unfittable: {0}")]
    Unfittable(String),

    #[error("Newton-Raphson did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("singular information matrix (collinear covariates?)")]
    SingularInformation,

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("TOML parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("TOML write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::UndefinedMle { .. }
                | Error::DegenerateProbability { .. }
                | Error::NoApproximation
                | Error::HorizonExceeded { .. }
                | Error::Calibration(_)
                | Error::NonConvergence { .. }
                | Error::SingularInformation
                | Error::Unfittable(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
