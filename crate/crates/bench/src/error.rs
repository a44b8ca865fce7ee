use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] spingp::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("kernel expression, column {column}: {message}")]
    KernelExpr { column: usize, message: String },

    #[error("{0}: no valid data rows")]
    NoValidRows(PathBuf),

    #[error("{path}: malformed row {line}: {message}")]
    MalformedRow { path: PathBuf, line: usize, message: String },

    #[error("{path}: timestamps not increasing at line {line}")]
    NonIncreasingTimes { path: PathBuf, line: usize },

    #[error("config: {0}")]
    Config(String),
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
