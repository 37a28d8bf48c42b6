use std::fmt;
use std::path::PathBuf;

use foodseg_nn::backbone::{EncoderConfig, EncoderKind};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SegError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    DilationHead,
    FpnHead,
    TransformerNaiveHead,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::DilationHead => "dilation_head",
            DecoderKind::FpnHead => "fpn_head",
            DecoderKind::TransformerNaiveHead => "transformer_naive_head",
        })
    }
}

/// `"random"` or the path of an exported pretraining archive.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum InitSource {
    #[default]
    Random,
    Archive(PathBuf),
}

impl From<String> for InitSource {
    fn from(s: String) -> Self {
        if s == "random" {
            InitSource::Random
        } else {
            InitSource::Archive(PathBuf::from(s))
        }
    }
}

impl From<InitSource> for String {
    fn from(s: InitSource) -> Self {
        match s {
            InitSource::Random => "random".into(),
            InitSource::Archive(p) => p.to_string_lossy().into_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip: bool,
    /// Brightness offset and contrast factor are drawn from
    /// `[-jitter, jitter]` and `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale_min: 0.5,
            scale_max: 2.0,
            flip: true,
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderKind,
    pub num_classes: usize,
    pub decoder_width: usize,
    pub crop_size: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_iters: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub init_source: InitSource,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderKind::DilationHead,
            num_classes: 5,
            decoder_width: 32,
            crop_size: 32,
            batch_size: 4,
            base_lr: 1e-3,
            max_iters: 100,
            momentum: 0.9,
            weight_decay: 5e-4,
            poly_power: 0.9,
            init_source: InitSource::Random,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        check_compatible(self.encoder.kind, self.decoder)?;
        let bad = |m: &str| Err(SegError::Config(m.to_string()));
        if self.num_classes == 0 || self.num_classes > 255 {
            return bad("num_classes must lie in 1..=255");
        }
        if self.crop_size == 0 || self.batch_size == 0 || self.decoder_width == 0 {
            return bad("crop_size, batch_size and decoder_width must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.base_lr > 0.0) || !(self.poly_power > 0.0) {
            return bad("base_lr and poly_power must be positive");
        }
        if !(self.augment.scale_min > 0.0 && self.augment.scale_min <= self.augment.scale_max) {
            return bad("augment scale range must be positive and ordered");
        }
        Ok(())
    }
}

/// The transformer head needs transformer features; the pyramid head needs
/// the multi-stage convolutional encoder.
pub fn check_compatible(encoder: EncoderKind, decoder: DecoderKind) -> Result<()> {
    let ok = match decoder {
        DecoderKind::DilationHead => true,
        DecoderKind::FpnHead => encoder == EncoderKind::Convolutional,
        DecoderKind::TransformerNaiveHead => encoder == EncoderKind::Transformer,
    };
    if ok {
        Ok(())
    } else {
        Err(SegError::Incompatible { encoder, decoder })
    }
}
