use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::raster::BandId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("window out of bounds: {0}")]
    Bounds(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported tiff variant: {0}")]
    UnsupportedVariant(String),
    #[error("unsupported tiff compression {0} (only 1 = none is supported)")]
    UnsupportedCompression(u32),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("incomplete scene, missing bands: {}", format_bands(.0))]
    IncompleteScene(Vec<BandId>),
    #[error("shape consistency: {0}")]
    ShapeConsistency(String),
    #[error("manifest integrity: {0}")]
    ManifestIntegrity(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("split: {0}")]
    Split(String),
    #[error("label domain: {0}")]
    LabelDomain(String),
    #[error("tile plan: {0}")]
    Plan(String),
    #[error("coverage: {0}")]
    Coverage(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("stale or mismatched forward cache: {0}")]
    Cache(String),
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite gradient in {tensor} at index {index}: {value}")]
    NonFinite {
        tensor: String,
        index: usize,
        value: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_bands(bands: &[BandId]) -> String {
    bands
        .iter()
        .map(|b| b.name())
        .collect::<Vec<_>>()
        .join(", ")
}
