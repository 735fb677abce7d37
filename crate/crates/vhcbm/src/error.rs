use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: checksum mismatch (manifest {expected}, blob {actual})")]
    Checksum { path: PathBuf, expected: String, actual: String },

    #[error("{path}: expected {expected} values, found {actual}")]
    Dimension { path: PathBuf, expected: usize, actual: usize },

    #[error("{path}: record {index}: {message}")]
    Record { path: PathBuf, index: usize, message: String },

    #[error("invalid {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Core(#[from] vhcbm_core::error::Error),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<AppError>,
    },
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
    let path = path.into();
    move |source| AppError::Io { path, source }
}
