use serde::Serialize;
use thiserror::Error;

/// Exit status for invalid input or configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical failure.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] survcusum::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) if e.is_numeric() => "numeric",
            CliError::Core(survcusum::Error::Schema(_)) => "schema",
            CliError::Io { .. } => "io",
            _ => "config",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        let report = ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}
