use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("node with direct rate {rate} cannot relay at target rate {target}")]
    NotAHelper { rate: f64, target: f64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("internal consistency fault: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from user-supplied input rather than a
    /// runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Geometry(_)
                | Error::Domain(_)
                | Error::Config(_)
                | Error::NotAHelper { .. }
                | Error::Parse { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
