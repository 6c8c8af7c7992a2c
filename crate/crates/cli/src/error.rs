use thiserror::Error;

/// Everything that can abort a run, tagged with the process exit code it
/// maps to: 2 for config problems, 3 for numerical or I/O failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(Box<toml::de::Error>),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Numerics(#[from] exitlab::Error),

    #[error("cannot write report {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Config(_) => 2,
            CliError::Numerics(_) | CliError::Output { .. } => 3,
        }
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Parse(Box::new(e))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
