use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input or configuration rejected before any work was done.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate embedding: zero vector cannot be normalized")]
    DegenerateEmbedding,

    #[error("degenerate accuracy vector: {0}")]
    DegenerateAccuracy(String),

    #[error("caption too short for {segments} segments (item {item})")]
    CaptionTooShort { item: String, segments: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed manifest row at line {line}: {message}")]
    ManifestRow { line: usize, message: String },

    #[error("missing image files for items: {}", ids.join(", "))]
    MissingImages { ids: Vec<String> },

    #[error("failed to read image for item {item}: {message}")]
    ImageIngest { item: String, message: String },

    /// Provider could not be reached or answered with an error, after retries.
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider {
        message: String,
        attempts: u32,
        retryable: bool,
    },

    #[error("provider protocol violation: {0}")]
    Protocol(String),

    #[error("incomplete run: missing cells {}", format_cells(missing))]
    IncompleteRun { missing: Vec<(usize, usize)> },

    #[error("run manifest at {path} belongs to a different config (hash {found}, expected {expected})")]
    ConfigMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("cache entry {key} is corrupt: {message}")]
    CorruptCache { key: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True when the failure comes from user input (config, manifest, plan)
    /// rather than from the provider or the runtime environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::CaptionTooShort { .. }
                | Error::ManifestRow { .. }
                | Error::MissingImages { .. }
                | Error::ConfigMismatch { .. }
                | Error::DegenerateAccuracy(_)
                | Error::Json(_)
        )
    }
}

fn format_cells(cells: &[(usize, usize)]) -> String {
    cells
        .iter()
        .map(|(k, j)| format!("({k},{j})"))
        .collect::<Vec<_>>()
        .join(", ")
}
