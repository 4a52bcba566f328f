//! Library side of the `gameflow` command-line tool: config parsing, the
//! four subcommands and the CSV format they emit.

pub mod commands;
pub mod config;
pub mod csvio;

use gameflow::GameError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        match e {
            GameError::InvalidPartition(_)
            | GameError::DimensionMismatch { .. }
            | GameError::UnsupportedGame
            | GameError::AsymmetricInput(_)
            | GameError::UnsupportedMethod(_)
            | GameError::InvalidConfig(_) => CliError::Config(e.to_string()),
            GameError::NonFiniteValue { .. }
            | GameError::NonFinite(_)
            | GameError::SingularBlock(_)
            | GameError::ConvergenceFailure(_)
            | GameError::NotHurwitz(_)
            | GameError::AccuracyContract(_) => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
