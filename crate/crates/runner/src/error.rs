use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Core(#[from] ptdebias_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tensor file: {0}")]
    Tensors(String),
    #[error("checkpoint task `{checkpoint}` cannot be evaluated on the {benchmark} benchmark")]
    TaskMismatch { checkpoint: String, benchmark: String },
    #[error("incompatible backbone: {0}")]
    IncompatibleBackbone(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("report has no epoch series to plot")]
    MissingSeries,
    #[error("frozen backbone changed during training (digest {before} -> {after})")]
    BackboneModified { before: String, after: String },
}

pub type Result<T, E = RunnerError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| RunnerError::Io {
            path: path.into(),
            source,
        })
    }
}
