use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// No classifier can be built (empty dataset).
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),

    #[error("unknown decision boundary {0}")]
    InvalidBoundary(u32),

    #[error("invalid action `{0}`; expected forward, left or right")]
    InvalidAction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("reports were generated under different seeds: {0}")]
    SeedMismatch(String),

    #[error("archive integrity error: {0}")]
    Integrity(String),

    #[error("unsupported schema version {found} for {what} (expected {expected})")]
    SchemaVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
