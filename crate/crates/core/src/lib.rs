//! Multimodal sequence fusion at desk scale.
//!
//! The crate is organized around a small f64 tensor core with reverse-mode
//! differentiation (`tensor`, `graph`), the neural building blocks used by
//! the fusion architectures (`layers`), two end-to-end model families
//! (`models`), a feature-table data pipeline with synthetic generators
//! (`data`), evaluation metrics (`metrics`), and the training protocol plus
//! experiment runner (`training`).
//!
//! With the default `parallel` feature, batch gradients, per-modality
//! training and finite-difference sweeps run on rayon; the sequential
//! fallback produces bit-identical numbers.

pub mod data;
pub mod error;
pub mod grad_check;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
