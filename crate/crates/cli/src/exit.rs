use std::fmt;
use std::process::ExitCode;

/// Process exit codes. Documented in docs/cli.md.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    /// The request was refused or failed (service error document, I/O).
    Failure = 1,
    /// Bad flags or configuration.
    Config = 2,
    /// Service unreachable or listen address unavailable.
    Network = 3,
    /// A correctness or acceptance check did not hold.
    Check = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Exit::Config, message)
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self::new(Exit::Check, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<condb_client::ClientError> for CliError {
    fn from(e: condb_client::ClientError) -> Self {
        use condb_client::ClientError as E;
        let exit = match &e {
            E::Connectivity(_) => Exit::Network,
            E::Config(_) => Exit::Config,
            E::Integrity { .. } => Exit::Check,
            _ => Exit::Failure,
        };
        Self::new(exit, e.to_string())
    }
}

impl From<condb_loadgen::LoadgenError> for CliError {
    fn from(e: condb_loadgen::LoadgenError) -> Self {
        use condb_loadgen::LoadgenError as E;
        let exit = match &e {
            E::Config(_) => Exit::Config,
            E::Client(c) if matches!(c, condb_client::ClientError::Connectivity(_)) => Exit::Network,
            E::Serve(condb_service::ServeError::Bind { .. }) => Exit::Network,
            _ => Exit::Failure,
        };
        Self::new(exit, e.to_string())
    }
}

impl From<condb_core::StoreError> for CliError {
    fn from(e: condb_core::StoreError) -> Self {
        let exit = match &e {
            condb_core::StoreError::SchemaConflict(_) => Exit::Config,
            _ => Exit::Failure,
        };
        Self::new(exit, e.to_string())
    }
}

impl From<condb_service::ServeError> for CliError {
    fn from(e: condb_service::ServeError) -> Self {
        let exit = match &e {
            condb_service::ServeError::Bind { .. } => Exit::Network,
            condb_service::ServeError::RequestLog { .. } => Exit::Config,
            condb_service::ServeError::Io(_) => Exit::Failure,
        };
        Self::new(exit, e.to_string())
    }
}

impl From<condb_service::ConfigError> for CliError {
    fn from(e: condb_service::ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

pub fn code(exit: Exit) -> ExitCode {
    ExitCode::from(exit as u8)
}

pub type CliResult<T = ()> = Result<T, CliError>;
