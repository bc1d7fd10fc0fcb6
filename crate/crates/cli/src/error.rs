use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: &'static str },
    #[error("content hash mismatch for {0}")]
    HashMismatch(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Core(#[from] dprong_core::Error),
    #[error(transparent)]
    Model(#[from] dprong_nn::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit status: 0 success, 1 usage/config, 2 data, 3 numeric failure.
pub fn exit_code(e: &CliError) -> i32 {
    use dprong_core::Error as C;
    use dprong_nn::Error as N;
    match e {
        CliError::Usage(_) | CliError::Config(_) => 1,
        CliError::Core(C::InvalidConfig(_) | C::InvalidSpec(_)) => 1,
        CliError::Model(N::InvalidConfig(_) | N::StageOrder(_)) => 1,
        CliError::Core(C::TotalConflict { .. } | C::DegenerateMass { .. }) => 3,
        CliError::Model(N::NonFiniteLoss { .. }) => 3,
        _ => 2,
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }
}
