use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// All trainable tensors keyed by stable dotted names, e.g.
/// `enc.0.attn.h1.w_q` or `dec.1.ffn.b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

pub(crate) fn attn_names(prefix: &str, heads: usize) -> (Vec<[String; 3]>, String) {
    let per_head = (0..heads)
        .map(|h| ["w_q", "w_k", "w_v"].map(|w| format!("{prefix}.h{h}.{w}")))
        .collect();
    (per_head, format!("{prefix}.w_o"))
}

enum Init {
    Xavier,
    Zeros,
    Ones,
}

impl ModelParams {
    /// Registers every parameter for `config` and initialises it: matrices
    /// uniform in `±√(6 / (fan_in + fan_out))`, biases zero, norm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (d, dk, f, v) = (config.d_model, config.d_k(), config.d_ff, config.vocab_size);
        let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| specs.push((name, shape, init));

        let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
            let (heads, w_o) = attn_names(prefix, config.heads);
            for names in heads {
                for n in names {
                    push(n, vec![d, dk], Init::Xavier);
                }
            }
            push(w_o, vec![config.heads * dk, d], Init::Xavier);
        };
        let ffn = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
            push(format!("{prefix}.w1"), vec![d, f], Init::Xavier);
            push(format!("{prefix}.b1"), vec![f], Init::Zeros);
            push(format!("{prefix}.w2"), vec![f, d], Init::Xavier);
            push(format!("{prefix}.b2"), vec![d], Init::Zeros);
        };
        let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
            push(format!("{prefix}.gain"), vec![d], Init::Ones);
            push(format!("{prefix}.bias"), vec![d], Init::Zeros);
        };

        push("feat_proj.w".into(), vec![config.d_feat, d], Init::Xavier);
        for l in 0..config.layers {
            attn(&mut push, &format!("enc.{l}.attn"));
            if config.geometry {
                push(format!("enc.{l}.w_g"), vec![config.heads, 4 * config.d_g], Init::Xavier);
            }
            norm(&mut push, &format!("enc.{l}.ln1"));
            ffn(&mut push, &format!("enc.{l}.ffn"));
            norm(&mut push, &format!("enc.{l}.ln2"));

            attn(&mut push, &format!("dec.{l}.self_attn"));
            norm(&mut push, &format!("dec.{l}.ln1"));
            attn(&mut push, &format!("dec.{l}.cross_attn"));
            norm(&mut push, &format!("dec.{l}.ln2"));
            ffn(&mut push, &format!("dec.{l}.ffn"));
            norm(&mut push, &format!("dec.{l}.ln3"));
        }
        push("tok_emb".into(), vec![v, d], Init::Xavier);
        push("out.w".into(), vec![d, v], Init::Xavier);
        push("out.b".into(), vec![v], Init::Zeros);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        // Draw in registration order so the stream does not depend on map order.
        for (name, shape, init) in specs {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
                Init::Xavier => {
                    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor::new(shape, data)?
                }
            };
            let dup = tensors.insert(name.clone(), t);
            debug_assert!(dup.is_none(), "duplicate parameter {name}");
        }
        Ok(ModelParams { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}
