//! Command implementations behind the `selfonn` binary.

pub mod commands;
pub mod config;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    /// A quantitative check did not hold.
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Engine(#[from] selfonn::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use selfonn::Error as E;
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Engine(e) => match e {
                E::Diverged(_) | E::NonFinite(_) | E::NonFiniteGradient { .. } | E::Domain { .. } => 3,
                _ => 2,
            },
        }
    }
}

pub const EXIT_OK: i32 = 0;
