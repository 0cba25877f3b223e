use std::path::PathBuf;

use masksurv_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad invocation or configuration; exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: CoreError,
    },
    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset: {0}")]
    Schema(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("report: {0}")]
    Report(String),
    #[error("gradcheck: {0}")]
    GradCheck(String),
    #[error("{stage} (time unit {unit}, fold {fold}, {pipeline}): {source}")]
    Fold {
        stage: &'static str,
        unit: String,
        fold: usize,
        pipeline: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

/// Attaches the name of the module whose operation failed.
pub fn in_module(module: &'static str) -> impl Fn(CoreError) -> Error {
    move |source| Error::Core { module, source }
}
