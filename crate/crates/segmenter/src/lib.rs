//! Encoder-decoder semantic segmentation at toy scale.
//!
//! A convolutional or transformer encoder feeds one of three decoders: a
//! dilation head on the last feature map, a feature pyramid head over all
//! stages, or a naive head of two convolution blocks on transformer tokens.

pub mod augment;
pub mod config;
pub mod error;
pub mod loss;
pub mod model;
pub mod schedule;
pub mod train;

pub use config::{AugmentConfig, DecoderKind, InitSource, SegmenterConfig};
pub use error::{Result, SegError};
pub use loss::{argmax_labels, pixel_ce_loss, PixelLoss};
pub use model::{Decoder, Segmenter};
pub use schedule::poly_lr;
pub use train::{train, SegDataset, TrainState, Trainer};
