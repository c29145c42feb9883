use thiserror::Error;

use alarm_hmm::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(CoreError::Csv(e))
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                CoreError::SymbolOutOfRange { .. } => "unknown_symbol",
                CoreError::InvalidModel(_) => "invalid_model",
                CoreError::Schema(_) | CoreError::Json(_) | CoreError::Csv(_) => "schema_mismatch",
                CoreError::ZeroProbability { .. } => "zero_probability",
                CoreError::DimensionMismatch(_) => "dimension_mismatch",
                CoreError::ZeroVariance(_) => "zero_variance",
                CoreError::Domain(_) => "domain",
                CoreError::Io(_) => "io",
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "usage" => 2,
            "invalid_model" => 3,
            "schema_mismatch" => 4,
            "unknown_symbol" => 5,
            "io" => 6,
            _ => 1,
        }
    }

    /// One-line JSON object: `{"error":<kind>,"message":<text>}`.
    pub fn line(&self) -> String {
        let message = self.to_string().replace('\n', " ");
        serde_json::json!({ "error": self.kind(), "message": message }).to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
