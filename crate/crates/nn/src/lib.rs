//! A small reverse-mode automatic differentiation engine over `f64`
//! tensors, with the layers needed by the recipe-alignment pretraining and
//! the segmentation models.
//!
//! Everything runs single-threaded in a fixed order, so identical inputs,
//! weights and seeds always give bit-identical results.

pub mod archive;
pub mod backbone;
pub mod error;
pub mod graph;
pub mod image;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use archive::Archive;
pub use error::{NnError, Result};
pub use graph::{Grads, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
