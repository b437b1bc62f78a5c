//! Greedy and beam-search caption generation.
//!
//! Search space: starting after BOS, each step appends one token other than
//! PAD or BOS. A hypothesis ends when it appends EOS, or when it already
//! holds `max_len` words (then it ends without EOS). Scores are summed
//! natural-log probabilities; returned sequences exclude BOS and EOS.

use std::cmp::Ordering;

use crate::data::{DetectionSet, TokenId, BOS, EOS, MAX_CAPTION_WORDS, PAD};
use crate::error::Result;
use crate::model::CaptionModel;
use crate::tensor::Tensor;

/// Source of next-token log-probabilities given a prefix that starts with BOS.
pub trait TokenScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Scores prefixes with a model against one image's encoder memory. The
/// full decoder is re-run for every prefix.
pub struct ModelScorer<'m> {
    model: &'m CaptionModel,
    memory: Tensor,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m CaptionModel, det: &DetectionSet) -> Result<Self> {
        Ok(ModelScorer {
            model,
            memory: model.memory(det)?,
        })
    }
}

impl TokenScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let logits = self.model.decode_with_memory(&self.memory, prefix)?;
        let last = logits.matrix_dims().0 - 1;
        Ok(log_softmax(logits.row(last)))
    }
}

fn generable(id: usize) -> bool {
    id != PAD as usize && id != BOS as usize
}

/// A partial or complete caption.
#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    /// Generated tokens, EOS included when finished by it.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Beam {
    /// Words only, without a trailing EOS.
    pub fn words(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    fn word_count(&self) -> usize {
        self.words().len()
    }

    /// `log_prob / length^alpha`, length counting generated tokens.
    pub fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            return self.log_prob;
        }
        self.log_prob / (self.tokens.len().max(1) as f64).powf(alpha)
    }
}

/// Higher score first, then lexicographically smaller ids.
fn rank(a: &Beam, b: &Beam, alpha: f64) -> Ordering {
    b.score(alpha).total_cmp(&a.score(alpha)).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Repeatedly takes the most likely token (lowest id on ties).
pub fn greedy_search(scorer: &impl TokenScorer, max_len: usize) -> Result<Beam> {
    let mut prefix = vec![BOS];
    let mut beam = Beam {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while beam.word_count() < max_len {
        let lp = scorer.log_probs(&prefix)?;
        let (best, &best_lp) = lp
            .iter()
            .enumerate()
            .filter(|(i, _)| generable(*i))
            .fold(None::<(usize, &f64)>, |acc, (i, v)| match acc {
                Some((_, bv)) if *bv >= *v => acc,
                _ => Some((i, v)),
            })
            .expect("vocabulary has a generable token");
        let tok = best as TokenId;
        beam.tokens.push(tok);
        beam.log_prob += best_lp;
        if tok == EOS {
            beam.finished = true;
            break;
        }
        prefix.push(tok);
    }
    Ok(beam)
}

/// Beam search keeping `beam_width` live hypotheses; finished ones are kept
/// aside and the best by `log_prob / length^alpha` is returned.
pub fn beam_search(scorer: &impl TokenScorer, beam_width: usize, max_len: usize, alpha: f64) -> Result<Beam> {
    let width = beam_width.max(1);
    let mut live = vec![Beam {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut done: Vec<Beam> = Vec::new();
    while !live.is_empty() {
        let mut candidates = Vec::with_capacity(live.len() * scorer.vocab_size());
        for beam in &live {
            let mut prefix = Vec::with_capacity(beam.tokens.len() + 1);
            prefix.push(BOS);
            prefix.extend_from_slice(&beam.tokens);
            let lp = scorer.log_probs(&prefix)?;
            for (id, &l) in lp.iter().enumerate().filter(|(i, _)| generable(*i)) {
                let mut tokens = beam.tokens.clone();
                tokens.push(id as TokenId);
                candidates.push(Beam {
                    finished: id == EOS as usize,
                    tokens,
                    log_prob: beam.log_prob + l,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a, b, alpha));
        candidates.truncate(width);
        live.clear();
        for c in candidates {
            if c.finished || c.word_count() >= max_len {
                done.push(c);
            } else {
                live.push(c);
            }
        }
        // With no length normalisation, extending a hypothesis never raises
        // its score, so stop once a finished one beats every live one.
        if alpha == 0.0 {
            let best_done = done.iter().map(|b| b.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if live.iter().all(|b| b.log_prob < best_done) {
                break;
            }
        }
    }
    done.sort_by(|a, b| rank(a, b, alpha));
    Ok(done.into_iter().next().expect("beam search finishes at least one hypothesis"))
}

/// Greedy caption for `det`, as word ids.
pub fn greedy_decode(model: &CaptionModel, det: &DetectionSet, max_len: usize) -> Result<Vec<TokenId>> {
    let scorer = ModelScorer::new(model, det)?;
    Ok(greedy_search(&scorer, max_len.min(model.config.max_len))?.words().to_vec())
}

/// Beam-search caption for `det`, as word ids.
pub fn beam_decode(
    model: &CaptionModel,
    det: &DetectionSet,
    beam_width: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Vec<TokenId>> {
    let scorer = ModelScorer::new(model, det)?;
    let beam = beam_search(&scorer, beam_width, max_len.min(model.config.max_len), length_penalty)?;
    Ok(beam.words().to_vec())
}

/// Default generation length limit in words.
pub const DEFAULT_MAX_LEN: usize = MAX_CAPTION_WORDS;
