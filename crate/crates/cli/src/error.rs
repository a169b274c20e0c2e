use anomaly_seek::Error as EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Missing, unreadable or malformed input.
    #[error("{0}")]
    Input(String),

    /// Invalid configuration, flags or shapes.
    #[error("{0}")]
    Config(String),

    /// A solver or metric could not produce a value.
    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Engine(e) => match e {
                EngineError::Format(_) | EngineError::Data(_) | EngineError::Manifest(_) | EngineError::Io { .. } => 2,
                EngineError::Dimension { .. }
                | EngineError::EmptyStore
                | EngineError::Argument(_)
                | EngineError::Spec(_) => 3,
                EngineError::DegenerateData(_) | EngineError::Convergence { .. } => 4,
            },
        }
    }
}
