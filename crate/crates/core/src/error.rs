use std::path::PathBuf;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("{count} ambiguous neurons exceed the enumeration limit of {limit}")]
    TooManyAmbiguous { count: usize, limit: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unknown {kind} `{name}`")]
    UnknownId { kind: &'static str, name: String },

    #[error("linear program: {0}")]
    Lp(String),

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
