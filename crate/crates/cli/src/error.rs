use std::path::Path;

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Malformed or mutually inconsistent input files and configs.
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    /// Shape algebra, metrics and non-finite values.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn from_core(e: rrnet_core::Error) -> Self {
        use rrnet_core::Error as E;
        let text = e.to_string();
        match e {
            E::Io { .. } => CliError::Io(text),
            E::ConfigSyntax { .. } | E::ConfigValue { .. } | E::Format(_) | E::MissingWeight(_) | E::Graph { .. } => {
                CliError::Parse(text)
            }
            _ => CliError::Numeric(text),
        }
    }

    /// Prefixes the message with the file it concerns.
    pub fn context(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{p}: {m}")),
            CliError::Parse(m) => CliError::Parse(format!("{p}: {m}")),
            CliError::Io(m) => CliError::Io(m),
            CliError::Numeric(m) => CliError::Numeric(format!("{p}: {m}")),
        }
    }
}
