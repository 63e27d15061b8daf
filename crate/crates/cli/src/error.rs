use std::fmt;

/// Process exit statuses. Every failure maps to exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    /// I/O failures and anything unexpected.
    Internal = 1,
    /// Unreadable or invalid configuration, missing inputs, bad flags.
    Config = 2,
    /// The completion provider failed or could not be reached.
    Provider = 3,
    /// Some units of work succeeded and others failed.
    Partial = 4,
    /// Input data rejected: stale deltas, cycles, corrupt or malformed files.
    Validation = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Config, message)
    }

    pub fn provider(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Provider, message)
    }

    pub fn partial(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Partial, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Validation, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Internal, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
