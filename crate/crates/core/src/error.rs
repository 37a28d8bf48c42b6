use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode raster {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("failed to encode raster: {0}")]
    Encode(String),
    #[error("{path}: expected an 8-bit single-channel raster, found {found}")]
    NotSingleChannel { path: PathBuf, found: String },
    #[error("pixel value {value} at index {index} is neither a class id below {num_classes} nor IGNORE")]
    InvalidLabel {
        value: u8,
        index: usize,
        num_classes: usize,
    },
    #[error("invalid raster shape {height}x{width} for {len} values")]
    InvalidShape {
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {0} has no entry in the mapping")]
    UnmappedLabel(u8),
    #[error("class count mismatch: {0} vs {1}")]
    ClassCountMismatch(usize, usize),
    #[error("invalid ontology: {0}")]
    Ontology(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid refinement plan: {0}")]
    Plan(String),
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
