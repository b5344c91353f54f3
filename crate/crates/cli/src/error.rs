use thiserror::Error;

/// Failures surfaced to the command line, each with a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("data format: {0}")]
    Format(String),

    #[error("runtime: {0}")]
    Runtime(String),
}

impl CliError {
    /// 1 usage/schema, 2 data format, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Schema(_) => 1,
            CliError::Format(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<biphoton_core::Error> for CliError {
    fn from(e: biphoton_core::Error) -> Self {
        use biphoton_core::Error as E;
        match e {
            E::InvalidModel(_) | E::Config(_) => CliError::Schema(e.to_string()),
            E::Format(_) | E::Ordering(_) => CliError::Format(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("json: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
