use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("state {0} is not admissible in this layer")]
    Inadmissible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric guard tripped: {0}")]
    Numeric(String),
    #[error("CMDP infeasible: {0}")]
    Infeasible(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
