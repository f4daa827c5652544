use kedmd_mpc::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// A certificate could not be established or was violated during a run.
    #[error("certificate violation: {0}")]
    Certificate(String),

    #[error("stale pipeline artifact: {0}")]
    Stale(String),

    #[error("missing upstream artifact {0}; run `{1}` first")]
    Missing(String, &'static str),

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for certificate violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Certificate(_) => 2,
            _ => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::TerminalSetCollapsed(_)
            | CoreError::InitialInfeasible { .. }
            | CoreError::NotProportional { .. }
            | CoreError::NotStabilizable(_) => CliError::Certificate(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
