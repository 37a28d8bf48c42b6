//! Recipe-aligned pretraining of vision encoders.
//!
//! Images are paired with recipes; a vision tower and a text tower are
//! trained so matching pairs have high cosine similarity, mismatched pairs
//! stay below a margin, and both embeddings predict the recipe's dish class.
//! Training alternates which tower is frozen, and the vision encoder is then
//! exported to initialize a segmenter.

pub mod error;
pub mod loss;
pub mod model;
pub mod pretrain;
pub mod recipe;
pub mod text;
pub mod vocab;

pub use error::{ReLeMError, Result};
pub use loss::{cosine_margin_loss, cross_entropy, semantic_loss, total_loss, CosineLoss, PairLabel, SemanticLoss};
pub use model::{import_encoder, ReLeMConfig, ReLeMModel};
pub use pretrain::{mean_intra_class_distance, PairedDataset, Pretrainer, StepLog};
pub use recipe::{PairRecord, Recipe, RecipeCorpus, RecipeRecord};
pub use text::{TextConfig, TextEncoder, TextEncoderKind};
pub use vocab::{build_semantic_vocab, SemanticVocabulary, TokenVocabulary};
