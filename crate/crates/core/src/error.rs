use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("{labels} ground-truth entities exceed {queries} predictions")]
    TooManyLabels { labels: usize, queries: usize },

    #[error("instance too large for exhaustive search: {0} injections")]
    TooLarge(u128),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("annotation {annotation} references unknown image id {image_id}")]
    UnknownImage { annotation: u64, image_id: u64 },

    #[error("annotation {annotation} references unknown category id {category_id}")]
    UnknownCategory { annotation: u64, category_id: u64 },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
