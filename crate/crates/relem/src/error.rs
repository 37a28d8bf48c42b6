use std::path::PathBuf;

use foodseg_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ReLeMError {
    #[error("empty dataset: no image/recipe pairs")]
    EmptyDataset,
    #[error("stage boundary {boundary} must be below total steps {total}")]
    StageBoundary { boundary: usize, total: usize },
    #[error("training already ran all {0} steps")]
    Finished(usize),
    #[error("recipe {0}: no ingredient tokens")]
    EmptyIngredients(String),
    #[error("recipe {0}: no instruction sentences")]
    EmptyInstructions(String),
    #[error("token id {id} outside vocabulary of {vocab}")]
    UnknownToken { id: usize, vocab: usize },
    #[error("semantic label {label} outside {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("empty title list")]
    NoTitles,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ReLeMError>;
