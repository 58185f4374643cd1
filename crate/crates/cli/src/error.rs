use std::fmt;

use thiserror::Error;

/// Where a setting came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Flag,
    /// 1-based line of the config file.
    Line(usize),
    Default,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", validation_message(.origin, .key, .message))]
    Validation {
        origin: Origin,
        key: String,
        message: String,
    },

    #[error("premise failed: {0}")]
    Premise(pathwise::Error),

    #[error(transparent)]
    Core(pathwise::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn validation_message(origin: &Origin, key: &str, message: &str) -> String {
    match origin {
        Origin::Flag | Origin::Default => format!("invalid --{key}: {message}"),
        Origin::Line(n) => format!("config line {n}, `{key}`: {message}"),
    }
}

impl CliError {
    pub fn validation(origin: Origin, key: &str, message: impl Into<String>) -> Self {
        CliError::Validation {
            origin,
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// 2 for invalid input, 3 for a failed premise, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 2,
            CliError::Premise(_) => 3,
            CliError::Core(e) => match e {
                pathwise::Error::InvalidArgument(_)
                | pathwise::Error::NotOnGrid { .. }
                | pathwise::Error::DimensionMismatch { .. } => 2,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}

impl From<pathwise::Error> for CliError {
    fn from(e: pathwise::Error) -> Self {
        match e {
            pathwise::Error::PremiseFailed { .. } => CliError::Premise(e),
            other => CliError::Core(other),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Flag => f.write_str("command line"),
            Origin::Line(n) => write!(f, "config line {n}"),
            Origin::Default => f.write_str("default"),
        }
    }
}
