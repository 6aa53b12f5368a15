use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(
        "particle {particle} left the safe region |x| <= {limit} at step {step} (x = {position})"
    )]
    Escape {
        particle: usize,
        step: usize,
        position: f64,
        limit: f64,
    },

    #[error("non-finite state for particle {particle} at step {step}")]
    NonFinite { particle: usize, step: usize },

    #[error("{what}: requires {required} but the cap is {cap}")]
    CapExceeded {
        what: String,
        required: u64,
        cap: u64,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Whether this error stems from invalid user input rather than a run failure.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Unsupported(_)
                | Error::Serde(_)
                | Error::Io(_)
                | Error::Precondition(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
