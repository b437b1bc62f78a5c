//! The captioning network: projected region features pass through a
//! geometry-gated encoder; a causal decoder cross-attends to the result.
//!
//! Layers are post-norm (`x = LN(x + sublayer(x))`). Object inputs carry no
//! positional encoding, so the encoder is permutation-equivariant; box
//! geometry enters only through the per-head attention gates. Decoder token
//! positions use the usual sinusoidal encoding.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use params::ModelParams;

use std::collections::BTreeMap;

use crate::attention::{causal_mask, multi_head_attention, HeadParams};
use crate::data::{DetectionSet, TokenId};
use crate::error::{Error, Result};
use crate::geometry::{geometric_bias, relative_geometry, sinusoid_embed};
use crate::tensor::{Dropout, Gradients, Graph, Mask, Tensor, Var};

use params::attn_names;

const LN_EPS: f64 = 1e-5;

/// A graph under construction plus lazily bound parameters.
pub struct Session<'p> {
    pub graph: Graph,
    params: &'p ModelParams,
    bound: BTreeMap<String, Var>,
    trainable: bool,
    dropout: Option<Dropout>,
}

impl<'p> Session<'p> {
    /// No gradients, no dropout.
    pub fn inference(params: &'p ModelParams) -> Self {
        Session {
            graph: Graph::new(),
            params,
            bound: BTreeMap::new(),
            trainable: false,
            dropout: None,
        }
    }

    /// Parameters require gradients; dropout is active when `dropout_rate > 0`.
    pub fn training(params: &'p ModelParams, dropout_rate: f64, dropout_seed: u64) -> Self {
        Session {
            trainable: true,
            dropout: (dropout_rate > 0.0).then(|| Dropout::new(dropout_rate, dropout_seed)),
            ..Session::inference(params)
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?.clone();
        let v = self.graph.leaf(t, self.trainable);
        self.bound.insert(name.to_owned(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradient for every registered parameter, zeros for those not used.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, t)| {
                let g = match self.bound.get(name) {
                    Some(&v) => grads.get(v),
                    None => Tensor::zeros(t.shape()),
                };
                (name.to_owned(), g)
            })
            .collect()
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.dropout.as_mut() {
            Some(d) => d.apply(&mut self.graph, x),
            None => Ok(x),
        }
    }

    fn head_params(&mut self, prefix: &str, heads: usize) -> Result<HeadParams> {
        let (per_head, w_o) = attn_names(prefix, heads);
        let mut hp = HeadParams {
            w_q: Vec::with_capacity(heads),
            w_k: Vec::with_capacity(heads),
            w_v: Vec::with_capacity(heads),
            w_o: self.param(&w_o)?,
        };
        for [q, k, v] in per_head {
            hp.w_q.push(self.param(&q)?);
            hp.w_k.push(self.param(&k)?);
            hp.w_v.push(self.param(&v)?);
        }
        Ok(hp)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &mut self,
        prefix: &str,
        heads: usize,
        x_q: Var,
        x_kv: Var,
        gates: Option<&[Var]>,
        mask: Option<&Mask>,
        eps_g: f64,
    ) -> Result<Var> {
        let hp = self.head_params(prefix, heads)?;
        multi_head_attention(&mut self.graph, x_q, x_kv, &hp, gates, mask, eps_g, self.dropout.as_mut())
    }

    fn norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gain = self.param(&format!("{prefix}.gain"))?;
        let bias = self.param(&format!("{prefix}.bias"))?;
        self.graph.layer_norm(x, gain, bias, LN_EPS)
    }

    /// `ReLU(x·W1 + b1)·W2 + b2`
    fn ffn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w1 = self.param(&format!("{prefix}.w1"))?;
        let b1 = self.param(&format!("{prefix}.b1"))?;
        let w2 = self.param(&format!("{prefix}.w2"))?;
        let b2 = self.param(&format!("{prefix}.b2"))?;
        let g = &mut self.graph;
        let h = g.matmul(x, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h)?;
        let o = g.matmul(h, w2)?;
        g.add_bias(o, b2)
    }

    /// `LN(x + dropout(y))`
    fn residual(&mut self, norm: &str, x: Var, y: Var) -> Result<Var> {
        let y = self.dropout(y)?;
        let s = self.graph.add(x, y)?;
        self.norm(norm, s)
    }
}

/// Standard sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d {
            let freq = 10_000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            t.data_mut()[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// `features · W`
pub fn project_features(graph: &mut Graph, features: Var, w: Var) -> Result<Var> {
    graph.matmul(features, w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl CaptionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(CaptionModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let reference = ModelParams::init(&config, 0)?;
        for (name, t) in reference.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "load_params",
                    lhs: t.shape().to_vec(),
                    rhs: got.shape().to_vec(),
                });
            }
        }
        if params.len() != reference.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                reference.len(),
                params.len()
            )));
        }
        Ok(CaptionModel { config, params })
    }

    pub fn inference_session(&self) -> Session<'_> {
        Session::inference(&self.params)
    }

    pub fn training_session(&self, dropout_seed: u64) -> Session<'_> {
        Session::training(&self.params, self.config.dropout_rate, dropout_seed)
    }

    fn check_detections(&self, det: &DetectionSet) -> Result<()> {
        if det.is_empty() {
            return Err(Error::EmptyDetections);
        }
        if det.len() > self.config.max_objects {
            return Err(Error::TooManyObjects {
                got: det.len(),
                max: self.config.max_objects,
            });
        }
        if det.feature_dim() != self.config.d_feat {
            return Err(Error::Dimension {
                op: "project_features",
                lhs: det.features.shape().to_vec(),
                rhs: vec![self.config.d_feat, self.config.d_model],
            });
        }
        Ok(())
    }

    /// Geometric gates for every encoder layer and head.
    fn gates(&self, sess: &mut Session, det: &DetectionSet) -> Result<Vec<Vec<Var>>> {
        let cfg = &self.config;
        if !cfg.geometry {
            return Ok(Vec::new());
        }
        let n = det.len();
        let geometry = relative_geometry(&det.boxes, cfg.eps_center, cfg.log_base)?;
        let emb = sinusoid_embed(&geometry, cfg.d_g)?.reshape(&[n * n, 4 * cfg.d_g])?;
        let emb = sess.graph.constant(emb);
        (0..cfg.layers)
            .map(|l| {
                let w_g = sess.param(&format!("enc.{l}.w_g"))?;
                geometric_bias(&mut sess.graph, emb, w_g, n)
            })
            .collect()
    }

    /// Encoder memory, `N × d_model`.
    pub fn encode(&self, sess: &mut Session, det: &DetectionSet) -> Result<Var> {
        self.check_detections(det)?;
        let cfg = &self.config;
        let gates = self.gates(sess, det)?;
        let feats = sess.graph.constant(det.features.clone());
        let w = sess.param("feat_proj.w")?;
        let mut x = project_features(&mut sess.graph, feats, w)?;
        for l in 0..cfg.layers {
            let gate = gates.get(l).map(Vec::as_slice);
            let a = sess.attention(&format!("enc.{l}.attn"), cfg.heads, x, x, gate, None, cfg.eps_g)?;
            x = sess.residual(&format!("enc.{l}.ln1"), x, a)?;
            let f = sess.ffn(&format!("enc.{l}.ffn"), x)?;
            x = sess.residual(&format!("enc.{l}.ln2"), x, f)?;
        }
        Ok(x)
    }

    /// Next-token logits `T × vocab_size` for decoder inputs `tokens`.
    pub fn decode(&self, sess: &mut Session, tokens: &[TokenId], memory: Var) -> Result<Var> {
        let cfg = &self.config;
        let t = tokens.len();
        if t == 0 || t > cfg.max_len + 1 {
            return Err(Error::Config(format!(
                "decoder input length {t} outside 1..={}",
                cfg.max_len + 1
            )));
        }
        let ids: Vec<usize> = tokens.iter().map(|&id| id as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Vocab {
                id: bad,
                size: cfg.vocab_size,
            });
        }
        let emb = sess.param("tok_emb")?;
        let x = sess.graph.gather_rows(emb, &ids)?;
        let x = sess.graph.scale(x, (cfg.d_model as f64).sqrt())?;
        let pe = sess.graph.constant(positional_encoding(t, cfg.d_model));
        let x = sess.graph.add(x, pe)?;
        let mut x = sess.dropout(x)?;
        let mask = causal_mask(t);
        for l in 0..cfg.layers {
            let a = sess.attention(&format!("dec.{l}.self_attn"), cfg.heads, x, x, None, Some(&mask), cfg.eps_g)?;
            x = sess.residual(&format!("dec.{l}.ln1"), x, a)?;
            let c = sess.attention(&format!("dec.{l}.cross_attn"), cfg.heads, x, memory, None, None, cfg.eps_g)?;
            x = sess.residual(&format!("dec.{l}.ln2"), x, c)?;
            let f = sess.ffn(&format!("dec.{l}.ffn"), x)?;
            x = sess.residual(&format!("dec.{l}.ln3"), x, f)?;
        }
        let w = sess.param("out.w")?;
        let b = sess.param("out.b")?;
        let logits = sess.graph.matmul(x, w)?;
        sess.graph.add_bias(logits, b)
    }

    pub fn forward(&self, sess: &mut Session, det: &DetectionSet, tokens: &[TokenId]) -> Result<Var> {
        let memory = self.encode(sess, det)?;
        self.decode(sess, tokens, memory)
    }

    /// Logits without recording gradients or applying dropout.
    pub fn logits(&self, det: &DetectionSet, tokens: &[TokenId]) -> Result<Tensor> {
        let mut sess = self.inference_session();
        let out = self.forward(&mut sess, det, tokens)?;
        Ok(sess.graph.value(out).clone())
    }

    pub fn memory(&self, det: &DetectionSet) -> Result<Tensor> {
        let mut sess = self.inference_session();
        let out = self.encode(&mut sess, det)?;
        Ok(sess.graph.value(out).clone())
    }

    /// Decoder logits against a precomputed encoder memory.
    pub fn decode_with_memory(&self, memory: &Tensor, tokens: &[TokenId]) -> Result<Tensor> {
        let mut sess = self.inference_session();
        let mem = sess.graph.constant(memory.clone());
        let out = self.decode(&mut sess, tokens, mem)?;
        Ok(sess.graph.value(out).clone())
    }
}
