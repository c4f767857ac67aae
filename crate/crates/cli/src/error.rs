use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] driftless_core::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad override {0:?}: {1}")]
    Override(String, String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: {1}")]
    Toml(PathBuf, String),
    #[error("missing artifact {0}; run the earlier stage first")]
    Missing(PathBuf),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| CliError::Io { path: path.into(), source })
    }
}
