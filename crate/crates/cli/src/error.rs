use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{module}: {source}")]
    Runtime { module: &'static str, source: ds2c2::Error },
    #[error("{module}: {source}")]
    Format { module: &'static str, source: ds2c2::Error },
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("incomplete model map: {0}")]
    Incomplete(String),
    #[error("{path}: {source}")]
    Output { path: std::path::PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime { .. } | CliError::Output { .. } => 3,
            CliError::Format { .. } | CliError::Mismatch(_) => 4,
            CliError::Incomplete(_) => 5,
        }
    }
}

impl From<ds2c2::Error> for CliError {
    fn from(e: ds2c2::Error) -> Self {
        let module = e.module();
        match e {
            ds2c2::Error::Config(msg) | ds2c2::Error::Dataset(msg) => CliError::Config(format!("{}: {}", module, msg)),
            ds2c2::Error::Checkpoint(_) | ds2c2::Error::Frame(_) => CliError::Format { module, source: e },
            _ => CliError::Runtime { module, source: e },
        }
    }
}
