use std::collections::BTreeMap;

use foodseg_core::LabelMap;
use foodseg_nn::archive::{Archive, OPTIMIZER, WEIGHTS};
use foodseg_nn::backbone::{Encoder, EncoderKind};
use foodseg_nn::graph::ConvOpts;
use foodseg_nn::image::stack;
use foodseg_nn::layers::Conv2d;
use foodseg_nn::{Graph, NnError, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{DecoderKind, SegmenterConfig};
use crate::error::{Result, SegError};
use crate::loss::argmax_labels;

pub const ENCODER: &str = "encoder";
pub const DECODER: &str = "decoder";

fn pad1() -> ConvOpts {
    ConvOpts {
        padding: 1,
        ..ConvOpts::default()
    }
}

/// Predicts from the last feature map only.
#[derive(Debug, Clone)]
pub struct DilationHead {
    conv: Conv2d,
    classifier: Conv2d,
}

/// Lateral 1x1 projections merged top-down, smoothed, upsampled to the
/// finest level and summed.
#[derive(Debug, Clone)]
pub struct FpnHead {
    lateral: Vec<Conv2d>,
    smooth: Vec<Conv2d>,
    classifier: Conv2d,
}

/// Two convolution blocks on the final transformer token map.
#[derive(Debug, Clone)]
pub struct NaiveHead {
    block1: Conv2d,
    block2: Conv2d,
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Dilation(DilationHead),
    Fpn(FpnHead),
    Naive(NaiveHead),
}

impl Decoder {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: DecoderKind,
        in_channels: &[usize],
        width: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let one = ConvOpts::default();
        let name = |s: &str| format!("{DECODER}.{s}");
        let last = *in_channels.last().unwrap();
        match kind {
            DecoderKind::DilationHead => Decoder::Dilation(DilationHead {
                conv: Conv2d::new(store, &name("conv"), last, width, 3, pad1(), true, rng),
                classifier: Conv2d::new(store, &name("classifier"), width, classes, 1, one, true, rng),
            }),
            DecoderKind::FpnHead => {
                let lateral = in_channels
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| Conv2d::new(store, &name(&format!("lateral{i}")), c, width, 1, one, true, rng))
                    .collect();
                let smooth = (0..in_channels.len())
                    .map(|i| Conv2d::new(store, &name(&format!("smooth{i}")), width, width, 3, pad1(), true, rng))
                    .collect();
                Decoder::Fpn(FpnHead {
                    lateral,
                    smooth,
                    classifier: Conv2d::new(store, &name("classifier"), width, classes, 1, one, true, rng),
                })
            }
            DecoderKind::TransformerNaiveHead => Decoder::Naive(NaiveHead {
                block1: Conv2d::new(store, &name("block1"), last, width, 3, pad1(), true, rng),
                block2: Conv2d::new(store, &name("block2"), width, classes, 1, one, true, rng),
            }),
        }
    }

    /// Logits `[N, C, height, width]` from encoder features.
    pub fn forward(&self, g: &mut Graph, features: &[Var], height: usize, width: usize) -> Var {
        let logits = match self {
            Decoder::Dilation(h) => {
                let x = h.conv.forward(g, *features.last().unwrap());
                let x = g.relu(x);
                h.classifier.forward(g, x)
            }
            Decoder::Naive(h) => {
                let x = h.block1.forward(g, *features.last().unwrap());
                let x = g.relu(x);
                h.block2.forward(g, x)
            }
            Decoder::Fpn(h) => {
                let n = features.len();
                let mut merged = vec![None; n];
                let mut top = h.lateral[n - 1].forward(g, features[n - 1]);
                merged[n - 1] = Some(top);
                for i in (0..n - 1).rev() {
                    let s = g.shape(features[i]).to_vec();
                    let up = g.upsample_bilinear(top, s[2], s[3]);
                    let lat = h.lateral[i].forward(g, features[i]);
                    top = g.add(lat, up);
                    merged[i] = Some(top);
                }
                let base = g.shape(features[0]).to_vec();
                let mut sum: Option<Var> = None;
                for (i, m) in merged.into_iter().enumerate() {
                    let p = h.smooth[i].forward(g, m.unwrap());
                    let p = g.relu(p);
                    let p = g.upsample_bilinear(p, base[2], base[3]);
                    sum = Some(match sum {
                        Some(s) => g.add(s, p),
                        None => p,
                    });
                }
                h.classifier.forward(g, sum.unwrap())
            }
        };
        g.upsample_bilinear(logits, height, width)
    }
}

/// Encoder parameters live under `encoder.`, decoder ones under `decoder.`.
#[derive(Debug, Clone)]
pub struct Segmenter {
    pub config: SegmenterConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Segmenter {
    /// Randomly initialized model; the seed fixes every weight.
    pub fn new(config: &SegmenterConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, ENCODER, &config.encoder, &mut rng);
        // decoder weights come from their own stream so that encoder
        // changes do not shift them
        let mut drng = ChaCha8Rng::seed_from_u64(config.seed);
        drng.set_stream(1);
        let decoder = Decoder::new(
            &mut store,
            config.decoder,
            &encoder.out_channels(),
            config.decoder_width,
            config.num_classes,
            &mut drng,
        );
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            decoder,
        })
    }

    /// Whether the encoder runs its last stage dilated for this decoder.
    pub fn dilated(&self) -> bool {
        self.config.decoder == DecoderKind::DilationHead && self.encoder.kind() == EncoderKind::Convolutional
    }

    pub fn features(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        self.encoder.forward(g, x, self.dilated())
    }

    /// Logits `[N, C, H, W]` for images `[N, 3, H, W]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(SegError::Shape(format!("expected [N, 3, H, W] images, got {s:?}")));
        }
        let feats = self.features(g, x);
        Ok(self.decoder.forward(g, &feats, s[2], s[3]))
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone());
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Per-pixel argmax for one `[3, H, W]` image.
    pub fn predict(&self, image: &Tensor) -> Result<LabelMap> {
        if image.rank() != 3 {
            return Err(SegError::Shape(format!("expected [3, H, W], got {:?}", image.shape())));
        }
        let logits = self.logits(&stack(&[image]))?;
        Ok(argmax_labels(&logits)?.remove(0))
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars("")
    }

    pub fn encoder_checksum(&self) -> String {
        self.store.checksum(ENCODER)
    }

    pub fn decoder_checksum(&self) -> String {
        self.store.checksum(DECODER)
    }

    /// Copies pretrained encoder weights in; the decoder is untouched.
    pub fn init_from_relem(&mut self, archive: &Archive) -> Result<()> {
        let found = archive.descriptor.get("encoder").cloned().unwrap_or_default();
        self.config.encoder.check_descriptor(&found)?;
        self.store.import(ENCODER, archive.section(WEIGHTS)?)?;
        Ok(())
    }

    pub fn descriptor(&self) -> Value {
        json!({
            "encoder": self.config.encoder.descriptor(),
            "decoder": self.config.decoder.to_string(),
            "decoder_width": self.config.decoder_width,
            "num_classes": self.config.num_classes,
        })
    }

    pub fn checkpoint(&self, optimizer_state: BTreeMap<String, Tensor>) -> Archive {
        Archive::new(self.descriptor())
            .with_section(WEIGHTS, self.store.export(""))
            .with_section(OPTIMIZER, optimizer_state)
    }

    /// Rebuilds a model for `config` and loads checkpoint weights, failing if
    /// the checkpoint was written for a different architecture.
    pub fn from_checkpoint(config: &SegmenterConfig, archive: &Archive) -> Result<Self> {
        let mut model = Self::new(config)?;
        if archive.descriptor != model.descriptor() {
            return Err(NnError::ArchitectureMismatch(format!(
                "config describes {}, checkpoint holds {}",
                model.descriptor(),
                archive.descriptor
            ))
            .into());
        }
        model.store.import("", archive.section(WEIGHTS)?)?;
        Ok(model)
    }
}

