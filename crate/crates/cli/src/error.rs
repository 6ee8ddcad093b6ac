use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing {what}: run {command} first")]
    MissingPrerequisite { what: String, command: &'static str },
    #[error("{0}")]
    Core(#[from] posefuse_core::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 missing prerequisite,
    /// 4 numerical divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use posefuse_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 2,
            CliError::MissingPrerequisite { .. } | CliError::Core(E::MissingComponent(_)) => 3,
            CliError::Core(E::Divergence(_)) => 4,
            _ => 1,
        }
    }
}
