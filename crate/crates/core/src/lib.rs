//! Image captioning with a geometry-gated transformer over detected regions.
//!
//! Detected boxes and their visual features are encoded by a transformer
//! whose self-attention weights are multiplied by a learned, non-negative
//! function of pairwise box geometry; a causal decoder generates the
//! caption. Everything, including reverse-mode differentiation, is built
//! on the small [`tensor`] module.
//!
//! ```no_run
//! use mtsm::data::{synth_scene, Vocabulary};
//! use mtsm::decoding::greedy_decode;
//! use mtsm::model::{CaptionModel, ModelConfig};
//!
//! let (det, captions) = synth_scene(7, 3, 16)?;
//! let vocab = Vocabulary::build(&captions, 1)?;
//! let model = CaptionModel::new(ModelConfig::tiny(vocab.len()), 0)?;
//! let ids = greedy_decode(&model, &det, 10)?;
//! println!("{}", vocab.decode_caption(&ids));
//! # Ok::<(), mtsm::Error>(())
//! ```

pub mod attention;
pub mod cli;
pub mod data;
pub mod decoding;
mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
