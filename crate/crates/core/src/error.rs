use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated an operation precondition (bad length, position outside the room, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or unsupported configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Geometry could not be satisfied after the bounded number of resampling attempts.
    #[error("infeasible scene after {attempts} attempts: {reason}")]
    Infeasible { attempts: usize, reason: String },

    /// SNR scaling was impossible because one of the components is silent.
    #[error("cannot scale to the requested SNR: {0}")]
    SnrScaling(String),

    /// Non-finite loss or an empty dataset during training.
    #[error("training fault at step {step}: {reason}")]
    TrainingFault { step: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error originates from user-supplied configuration or usage.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Toml(_))
    }
}
