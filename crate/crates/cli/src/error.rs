use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] oprpf::Error),
}

impl CliError {
    /// 1 for anything the user can fix in the inputs, 2 for numerical
    /// failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(oprpf::Error::Input(_)) => 1,
            CliError::Core(_) => 2,
            _ => 1,
        }
    }
}
