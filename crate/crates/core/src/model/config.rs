use serde::{Deserialize, Serialize};

use crate::attention::DEFAULT_EPS_G;
use crate::data::{MAX_CAPTION_WORDS, MAX_OBJECTS};
use crate::error::{Error, Result};
use crate::geometry::{LogBase, DEFAULT_EPS_CENTER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Encoder and decoder depth.
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub d_feat: usize,
    pub d_g: usize,
    pub max_objects: usize,
    /// Longest caption in words; the decoder sees up to `max_len + 1` positions (BOS included).
    pub max_len: usize,
    pub vocab_size: usize,
    pub log_base: LogBase,
    pub eps_center: f64,
    pub eps_g: f64,
    pub dropout_rate: f64,
    /// Geometric gating in encoder self-attention. `false` gives the plain-attention ablation.
    pub geometry: bool,
}

impl ModelConfig {
    /// Full-size hyperparameters: 512-d model, 6 layers, 2048-d region features, 78 objects, 51 words.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 512,
            layers: 6,
            heads: 8,
            d_ff: 2048,
            d_feat: 2048,
            d_g: 64,
            max_objects: MAX_OBJECTS,
            max_len: MAX_CAPTION_WORDS,
            vocab_size,
            log_base: LogBase::Ten,
            eps_center: DEFAULT_EPS_CENTER,
            eps_g: DEFAULT_EPS_G,
            dropout_rate: 0.1,
            geometry: true,
        }
    }

    /// Desk-scale model for real runs on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            layers: 2,
            heads: 4,
            d_ff: 128,
            d_feat: 32,
            d_g: 16,
            ..ModelConfig::paper(vocab_size)
        }
    }

    /// Smallest useful model, used by gradient checks and the overfit test.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 16,
            layers: 1,
            heads: 2,
            d_ff: 32,
            d_feat: 16,
            d_g: 8,
            dropout_rate: 0.0,
            ..ModelConfig::paper(vocab_size)
        }
    }

    pub fn preset(name: &str, vocab_size: usize) -> Result<Self> {
        match name {
            "paper" => Ok(ModelConfig::paper(vocab_size)),
            "desk" => Ok(ModelConfig::desk(vocab_size)),
            "tiny" => Ok(ModelConfig::tiny(vocab_size)),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected tiny, desk or paper)"))),
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("d_feat", self.d_feat),
            ("d_g", self.d_g),
            ("max_objects", self.max_objects),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_model < 2 {
            return Err(Error::Config("d_model must be at least 2".into()));
        }
        if !self.d_g.is_multiple_of(2) {
            return Err(Error::Config(format!("d_g must be even, got {}", self.d_g)));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if self.vocab_size <= crate::data::NUM_RESERVED {
            return Err(Error::Config("vocab_size must exceed the reserved ids".into()));
        }
        if !(self.eps_center > 0.0 && self.eps_g > 0.0) {
            return Err(Error::Config("eps_center and eps_g must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Closed-form count of trainable scalars. With `D = d_model`, `F = d_ff`,
    /// `V = vocab_size`, `H = heads`:
    ///
    /// ```text
    /// attention block  A = 3·H·D·d_k + (H·d_k)·D
    /// FFN              F' = 2·D·F + F + D
    /// encoder layer    A + F' + 2·2D + [geometry] H·4·d_g
    /// decoder layer    2A + F' + 3·2D
    /// total            d_feat·D + L·(enc + dec) + V·D + D·V + V
    /// ```
    pub fn parameter_count(&self) -> usize {
        let (d, f, v, h) = (self.d_model, self.d_ff, self.vocab_size, self.heads);
        let dk = self.d_k();
        let attn = 3 * h * d * dk + h * dk * d;
        let ffn = 2 * d * f + f + d;
        let ln = 2 * d;
        let geo = if self.geometry { h * 4 * self.d_g } else { 0 };
        let enc = attn + ffn + 2 * ln + geo;
        let dec = 2 * attn + ffn + 3 * ln;
        self.d_feat * d + self.layers * (enc + dec) + v * d + d * v + v
    }
}
