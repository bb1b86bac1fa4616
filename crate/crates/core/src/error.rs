use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent geometry, shapes or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical failure (non-finite values, step-size collapse).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// On-disk format violation (bad magic, truncation, header mismatch).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code convention: 2 config, 3 numerical, 4 I/O and format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 3,
            Error::Format(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
