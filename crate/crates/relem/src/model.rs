use std::collections::BTreeMap;

use foodseg_nn::archive::{Archive, WEIGHTS};
use foodseg_nn::backbone::{Encoder, EncoderConfig};
use foodseg_nn::layers::Linear;
use foodseg_nn::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ReLeMError, Result};
use crate::recipe::Recipe;
use crate::text::{TextConfig, TextEncoder};

pub const VISION: &str = "vision";
pub const TEXT: &str = "text";
pub const VISION_ENCODER: &str = "vision.encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReLeMConfig {
    pub alpha: f64,
    /// Joint embedding width.
    pub dim: usize,
    /// Requested number of semantic classes.
    pub num_semantic: usize,
    pub lambda_semantic: f64,
    pub negative_pair_probability: f64,
    pub text: TextConfig,
    pub vision: EncoderConfig,
    /// Steps trained with the vision side frozen; the rest freeze text.
    pub stage1_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for ReLeMConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            dim: 64,
            num_semantic: 2000,
            lambda_semantic: 1.0,
            negative_pair_probability: 0.5,
            text: TextConfig::default(),
            vision: EncoderConfig::default(),
            stage1_steps: 50,
            total_steps: 100,
            batch_size: 8,
            lr: 1e-4,
            image_size: 32,
            seed: 0,
        }
    }
}

impl ReLeMConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ReLeMError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.lambda_semantic >= 0.0) {
            return bad("lambda_semantic must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.negative_pair_probability) {
            return bad("negative_pair_probability must lie in [0, 1]");
        }
        if self.dim == 0 || self.batch_size == 0 || self.image_size == 0 || self.num_semantic == 0 {
            return bad("dim, batch_size, image_size and num_semantic must be positive");
        }
        if self.stage1_steps >= self.total_steps {
            return Err(ReLeMError::StageBoundary {
                boundary: self.stage1_steps,
                total: self.total_steps,
            });
        }
        Ok(())
    }
}

/// Vision and text towers with their semantic heads. Vision parameters live
/// under `vision.` and text parameters under `text.`.
#[derive(Debug, Clone)]
pub struct ReLeMModel {
    pub store: ParamStore,
    pub vision: Encoder,
    pub vision_projection: Linear,
    pub vision_head: Linear,
    pub text: TextEncoder,
    pub text_head: Linear,
    pub num_semantic: usize,
    pub dim: usize,
}

impl ReLeMModel {
    /// `num_semantic` is the effective class count of the semantic vocabulary.
    pub fn new(config: &ReLeMConfig, vocab_size: usize, num_semantic: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let vision = Encoder::new(&mut store, VISION_ENCODER, &config.vision, &mut rng);
        let width = *vision.out_channels().last().unwrap();
        let vision_projection = Linear::new(&mut store, "vision.projection", width, config.dim, &mut rng);
        let k = num_semantic.max(1);
        let vision_head = Linear::new(&mut store, "vision.head", config.dim, k, &mut rng);
        let text = TextEncoder::new(&mut store, "text.encoder", &config.text, vocab_size, config.dim, &mut rng);
        let text_head = Linear::new(&mut store, "text.head", config.dim, k, &mut rng);
        Self {
            store,
            vision,
            vision_projection,
            vision_head,
            text,
            text_head,
            num_semantic: k,
            dim: config.dim,
        }
    }

    /// Unnormalized `[N, dim]` codes for images `[N, 3, H, W]`.
    pub fn vision_forward(&self, g: &mut Graph, images: Var) -> Result<Var> {
        let shape = g.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(ReLeMError::Shape(format!("expected [N, 3, H, W] images, got {shape:?}")));
        }
        let features = *self.vision.forward(g, images, false).last().unwrap();
        let s = g.shape(features).to_vec();
        let flat = g.reshape(features, &[s[0], s[1], s[2] * s[3]]);
        let pooled = g.mean_axis(flat, 2);
        Ok(self.vision_projection.forward(g, pooled))
    }

    /// Unit-norm embeddings, one per image of `[N, 3, H, W]`.
    pub fn vision_embedding(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone());
        let raw = self.vision_forward(&mut g, x)?;
        let unit = g.l2_normalize(raw);
        Ok(g.value(unit).data().chunks(self.dim).map(<[f64]>::to_vec).collect())
    }

    /// Global-average-pooled final encoder map, one `[C]` row per image of
    /// `[N, 3, H, W]`, before the projection.
    pub fn encoder_embedding(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone());
        let features = *self.vision.forward(&mut g, x, false).last().unwrap();
        let s = g.shape(features).to_vec();
        let flat = g.reshape(features, &[s[0], s[1], s[2] * s[3]]);
        let pooled = g.mean_axis(flat, 2);
        Ok(g.value(pooled).data().chunks(s[1]).map(<[f64]>::to_vec).collect())
    }

    pub fn text_embedding(&self, recipe: &Recipe) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let raw = self.text.forward(&mut g, recipe)?;
        let unit = g.l2_normalize(raw);
        Ok(g.value(unit).data().to_vec())
    }

    pub fn vision_checksum(&self) -> String {
        self.store.checksum(VISION)
    }

    pub fn text_checksum(&self) -> String {
        self.store.checksum(TEXT)
    }

    /// Vision encoder weights (without projection or head), keyed without
    /// the `vision.encoder.` prefix.
    pub fn export_encoder(&self) -> Archive {
        Archive::new(json!({
            "encoder": self.vision.config.descriptor(),
            "source": "relem",
        }))
        .with_section(WEIGHTS, self.store.export(VISION_ENCODER))
    }
}

/// Loads encoder weights from an exported archive into `store` under
/// `prefix`, after checking that the archive was made for `config`.
pub fn import_encoder(archive: &Archive, config: &EncoderConfig, store: &mut ParamStore, prefix: &str) -> Result<()> {
    let found = archive.descriptor.get("encoder").cloned().unwrap_or_default();
    config.check_descriptor(&found)?;
    let weights: &BTreeMap<String, Tensor> = archive.section(WEIGHTS)?;
    store.import(prefix, weights)?;
    Ok(())
}
