use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller violated a shape or configuration contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A sampling window does not fit inside the raster.
    #[error("window out of raster bounds: {0}")]
    Boundary(String),

    /// The raster holds nodata (or non-finite) values inside a window.
    #[error("data quality: {0}")]
    DataQuality(String),

    /// Not enough examples to satisfy a request.
    #[error("insufficient data for {what}: need {needed}, have {available} (short by {})", needed - available)]
    Capacity {
        what: String,
        needed: usize,
        available: usize,
    },

    #[error("class `{0}` has no coordinates in the requested region")]
    EmptyClass(String),

    #[error("query endpoint unreachable after {retries} retries: {message}")]
    Network { retries: u32, message: String },

    #[error("non-finite loss at step {step} (scale {scale} m/px): {detail}")]
    NonFiniteLoss {
        step: usize,
        scale: f64,
        detail: String,
    },

    /// Embeddings carry no information a classifier could use.
    #[error("degenerate embeddings: {0}")]
    Degenerate(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("tiff: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
