use foodseg_nn::backbone::EncoderKind;
use foodseg_nn::NnError;

use crate::config::DecoderKind;

#[derive(Debug, thiserror::Error)]
pub enum SegError {
    #[error("decoder {decoder} cannot be used with a {encoder} encoder")]
    Incompatible { encoder: EncoderKind, decoder: DecoderKind },
    #[error("empty training split")]
    EmptyTrainSplit,
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} at pixel {index} is neither below {num_classes} nor ignore")]
    Label {
        label: u8,
        index: usize,
        num_classes: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] foodseg_core::Error),
}

pub type Result<T> = std::result::Result<T, SegError>;
