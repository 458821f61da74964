use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Schema or validation failure, with the offending field path.
    #[error("{file}: {field}: {message}")]
    Config {
        file: String,
        field: String,
        message: String,
    },
    #[error("{}:{line}: {message}", file.display())]
    Data {
        file: PathBuf,
        line: u64,
        message: String,
    },
    #[error("configs are not comparable: {0}")]
    Comparability(String),
    #[error("unknown {what} '{name}'")]
    Unknown { what: &'static str, name: String },
    #[error(transparent)]
    Core(#[from] marginflow::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
