//! Recipe text encoders.

use foodseg_nn::layers::{Embedding, Linear, Lstm, TransformerEncoder};
use foodseg_nn::{Graph, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ReLeMError, Result};
use crate::recipe::Recipe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextEncoderKind {
    Recurrent,
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub kind: TextEncoderKind,
    pub token_dim: usize,
    /// Hidden size of each direction of the ingredient LSTM.
    pub ingredient_hidden: usize,
    pub sentence_dim: usize,
    pub instruction_layers: usize,
    pub instruction_heads: usize,
    pub instruction_mlp: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            kind: TextEncoderKind::Recurrent,
            token_dim: 32,
            ingredient_hidden: 32,
            sentence_dim: 32,
            instruction_layers: 2,
            instruction_heads: 4,
            instruction_mlp: 64,
        }
    }
}

#[derive(Debug, Clone)]
enum InstructionEncoder {
    Recurrent(Lstm),
    Transformer(TransformerEncoder),
}

/// Token embeddings shared by a bidirectional ingredient LSTM and an
/// instruction encoder over per-sentence vectors; both codes are
/// concatenated and projected to the joint embedding width.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub config: TextConfig,
    pub vocab_size: usize,
    embedding: Embedding,
    ing_fwd: Lstm,
    ing_bwd: Lstm,
    sentence: Linear,
    instructions: InstructionEncoder,
    projection: Linear,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: &TextConfig,
        vocab_size: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let c = config;
        let embedding = Embedding::new(store, &format!("{prefix}.embedding"), vocab_size, c.token_dim, rng);
        let ing_fwd = Lstm::new(store, &format!("{prefix}.ingredients.fwd"), c.token_dim, c.ingredient_hidden, rng);
        let ing_bwd = Lstm::new(store, &format!("{prefix}.ingredients.bwd"), c.token_dim, c.ingredient_hidden, rng);
        let sentence = Linear::new(store, &format!("{prefix}.sentence"), c.token_dim, c.sentence_dim, rng);
        let name = format!("{prefix}.instructions");
        let instructions = match c.kind {
            TextEncoderKind::Recurrent => {
                InstructionEncoder::Recurrent(Lstm::new(store, &name, c.sentence_dim, c.sentence_dim, rng))
            }
            TextEncoderKind::Transformer => InstructionEncoder::Transformer(TransformerEncoder::new(
                store,
                &name,
                c.sentence_dim,
                c.instruction_layers,
                c.instruction_heads,
                c.instruction_mlp,
                rng,
            )),
        };
        let projection = Linear::new(
            store,
            &format!("{prefix}.projection"),
            2 * c.ingredient_hidden + c.sentence_dim,
            out_dim,
            rng,
        );
        Self {
            config: c.clone(),
            vocab_size,
            embedding,
            ing_fwd,
            ing_bwd,
            sentence,
            instructions,
            projection,
        }
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.vocab_size) {
            Some(&id) => Err(ReLeMError::UnknownToken {
                id,
                vocab: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// `[1, 2 * ingredient_hidden]`: final forward and backward states.
    pub fn encode_ingredients(&self, g: &mut Graph, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(ReLeMError::EmptyIngredients(String::new()));
        }
        self.check_tokens(tokens)?;
        let x = self.embedding.forward(g, tokens);
        let f = self.ing_fwd.forward(g, x, false);
        let b = self.ing_bwd.forward(g, x, true);
        Ok(g.concat(&[f, b], 1))
    }

    /// `[1, sentence_dim]`.
    pub fn encode_instructions(&self, g: &mut Graph, sentences: &[Vec<usize>]) -> Result<Var> {
        if sentences.is_empty() || sentences.iter().any(Vec::is_empty) {
            return Err(ReLeMError::EmptyInstructions(String::new()));
        }
        let mut vectors = Vec::with_capacity(sentences.len());
        for s in sentences {
            self.check_tokens(s)?;
            let e = self.embedding.forward(g, s);
            let mean = g.mean_axis(e, 0);
            vectors.push(g.reshape(mean, &[1, self.config.token_dim]));
        }
        let seq = g.concat(&vectors, 0);
        let seq = self.sentence.forward(g, seq);
        let seq = g.tanh(seq);
        Ok(match &self.instructions {
            InstructionEncoder::Recurrent(lstm) => lstm.forward(g, seq, false),
            InstructionEncoder::Transformer(enc) => {
                let n = sentences.len();
                let x = g.reshape(seq, &[1, n, self.config.sentence_dim]);
                let y = enc.forward(g, x);
                g.mean_axis(y, 1)
            }
        })
    }

    /// Unnormalized `[1, out_dim]` code of a recipe.
    pub fn forward(&self, g: &mut Graph, recipe: &Recipe) -> Result<Var> {
        let ing = self
            .encode_ingredients(g, &recipe.ingredient_tokens)
            .map_err(|e| with_id(e, &recipe.recipe_id))?;
        let ins = self
            .encode_instructions(g, &recipe.instruction_sentences)
            .map_err(|e| with_id(e, &recipe.recipe_id))?;
        let joint = g.concat(&[ing, ins], 1);
        Ok(self.projection.forward(g, joint))
    }
}

fn with_id(e: ReLeMError, id: &str) -> ReLeMError {
    match e {
        ReLeMError::EmptyIngredients(_) => ReLeMError::EmptyIngredients(id.to_string()),
        ReLeMError::EmptyInstructions(_) => ReLeMError::EmptyInstructions(id.to_string()),
        other => other,
    }
}
