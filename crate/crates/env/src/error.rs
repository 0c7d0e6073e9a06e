use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action index {0} out of range 0..11")]
    InvalidAction(usize),

    #[error("step called on a finished episode; call reset first")]
    EpisodeDone,

    #[error("invalid environment config: {0}")]
    Config(String),

    #[error("could not generate a valid track from seed {seed} after {attempts} attempts")]
    TrackGeneration { seed: u64, attempts: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;
