use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in {what}: {detail}")]
    NonFinite { what: &'static str, detail: String },
    #[error("malformed {format} data at byte {offset}: {reason}")]
    Parse {
        format: &'static str,
        offset: u64,
        reason: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Nn(#[from] daif_nn::NnError),
    #[error(transparent)]
    Env(#[from] daif_env::EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
