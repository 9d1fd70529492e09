//! Crate-wide error type. The CLI maps variants onto process exit codes.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{file}: {detail}")]
    LineCount { file: PathBuf, detail: String },

    #[error("{file}:{line}: {detail}")]
    Malformed { file: PathBuf, line: usize, detail: String },

    /// Non-finite activation, gradient, or parameter; the message names the
    /// offending tensor or tape node.
    #[error("non-finite value in {0}")]
    Numeric(String),

    /// Model file problems: bad magic, version, checksum, manifest.
    #[error("model file error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("loss function is non-deterministic: {0} vs {1}")]
    NonDeterministic(f64, f64),

    #[error("empty input")]
    EmptyInput,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
