use rrme::RrmeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Model(#[from] RrmeError),

    /// Results were written but EM hit its iteration cap.
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Io { .. } => "io",
            CliError::Model(e) => e.category(),
            CliError::NotConverged(_) => "not_converged",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "config" => 2,
            "data" | "io" => 3,
            "not_converged" => 5,
            _ => 4,
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.category(), "message": self.to_string() }).to_string()
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
