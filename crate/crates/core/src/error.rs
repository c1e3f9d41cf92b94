use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounds: {0}")]
    Bounds(String),

    #[error("invalid mean targets: {0}")]
    Means(String),

    #[error("invalid control: {0}")]
    Control(String),

    #[error("control infeasible: {0}")]
    Infeasible(String),

    #[error("invalid linear block: {0}")]
    Block(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            _ => "validation",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
