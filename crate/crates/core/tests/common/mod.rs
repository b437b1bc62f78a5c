//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls the code it is used to check.

#![allow(dead_code)]

use mtsm::data::{DetectionSet, TokenId, BOS, EOS, PAD};
use mtsm::decoding::TokenScorer;
use mtsm::geometry::BoundingBox;
use mtsm::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_box(rng: &mut impl Rng) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(0.3..0.7),
        rng.random_range(0.3..0.7),
        rng.random_range(0.02..0.2),
        rng.random_range(0.02..0.2),
    )
}

/// Random detections with `n` boxes and `d_feat` features.
pub fn random_detections(rng: &mut impl Rng, n: usize, d_feat: usize) -> DetectionSet {
    let boxes = (0..n).map(|_| random_box(rng)).collect();
    let scores = (0..n).map(|_| rng.random_range(0.7..1.0)).collect();
    let features = random_tensor(rng, &[n, d_feat], 1.0);
    DetectionSet::new("random", boxes, scores, features).unwrap()
}

/// `(a·b)` by the textbook triple loop.
pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, _) = t.matrix_dims();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

/// `g·exp(a) / Σ g·exp(a)` per row, evaluated literally; `None` gate means 1.
pub fn gated_softmax_oracle(a: &[Vec<f64>], g: Option<&[Vec<f64>]>, eps_g: f64) -> Vec<Vec<f64>> {
    a.iter()
        .enumerate()
        .map(|(i, row)| {
            let shift = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let num: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(j, &x)| g.map_or(1.0, |g| g[i][j] + eps_g) * (x - shift).exp())
                .collect();
            let z: f64 = num.iter().sum();
            num.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Multi-head attention from explicit loops. Weights per head are
/// `d_model × d_k` matrices; `w_o` is `(H·d_k) × d_model`.
pub struct MhaOracle<'a> {
    pub w_q: &'a [Vec<Vec<f64>>],
    pub w_k: &'a [Vec<Vec<f64>>],
    pub w_v: &'a [Vec<Vec<f64>>],
    pub w_o: &'a [Vec<f64>],
}

impl MhaOracle<'_> {
    pub fn run(&self, xq: &[Vec<f64>], xkv: &[Vec<f64>], gates: Option<&[Vec<Vec<f64>>]>, eps_g: f64) -> Vec<Vec<f64>> {
        let heads = self.w_q.len();
        let mut concat = vec![Vec::new(); xq.len()];
        for h in 0..heads {
            let q = naive_matmul(xq, &self.w_q[h]);
            let k = naive_matmul(xkv, &self.w_k[h]);
            let v = naive_matmul(xkv, &self.w_v[h]);
            let dk = q[0].len() as f64;
            let logits: Vec<Vec<f64>> = q
                .iter()
                .map(|qi| k.iter().map(|kj| qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() / dk.sqrt()).collect())
                .collect();
            let w = gated_softmax_oracle(&logits, gates.map(|g| g[h].as_slice()), eps_g);
            let o = naive_matmul(&w, &v);
            for (c, r) in concat.iter_mut().zip(o) {
                c.extend(r);
            }
        }
        naive_matmul(&concat, self.w_o)
    }
}

/// Brute-force corpus BLEU: n-grams are compared as vectors by linear scan.
pub struct BleuOracle {
    pub matches: [u64; 4],
    pub totals: [u64; 4],
    pub cand_len: u64,
    pub ref_len: u64,
    pub bp: f64,
    pub bleu: [f64; 4],
}

fn ngrams<T: Clone>(s: &[T], n: usize) -> Vec<Vec<T>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn count<T: PartialEq>(items: &[Vec<T>], g: &[T]) -> u64 {
    items.iter().filter(|x| x.as_slice() == g).count() as u64
}

pub fn bleu_oracle<T: Clone + PartialEq>(cands: &[Vec<T>], refs: &[Vec<Vec<T>>]) -> BleuOracle {
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let (mut c, mut r) = (0u64, 0u64);
    for (cand, rs) in cands.iter().zip(refs) {
        c += cand.len() as u64;
        let mut best = rs[0].len();
        for x in rs {
            let (d, bd) = (x.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best as u64;
        for n in 1..=4 {
            let grams = ngrams(cand, n);
            totals[n - 1] += grams.len() as u64;
            let mut done: Vec<Vec<T>> = Vec::new();
            for g in &grams {
                if done.iter().any(|d| d == g) {
                    continue;
                }
                done.push(g.clone());
                let max_ref = rs.iter().map(|x| count(&ngrams(x, n), g)).max().unwrap();
                matches[n - 1] += count(&grams, g).min(max_ref);
            }
        }
    }
    let bp = if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut bleu = [0.0; 4];
    for n in 1..=4 {
        if (0..n).any(|k| matches[k] == 0) {
            continue;
        }
        let s: f64 = (0..n).map(|k| (matches[k] as f64 / totals[k] as f64).ln()).sum();
        bleu[n - 1] = bp * (s / n as f64).exp() * 100.0;
    }
    BleuOracle {
        matches,
        totals,
        cand_len: c,
        ref_len: r,
        bp,
        bleu,
    }
}

/// Best complete hypothesis by exhaustive enumeration: every sequence of
/// non-EOS generable tokens of length `< max_len` followed by EOS, and every
/// sequence of exactly `max_len` such tokens. Ranked by
/// `log_prob / len^alpha` (len counts EOS), then lexicographically.
pub fn exhaustive_best(scorer: &impl TokenScorer, max_len: usize, alpha: f64) -> (Vec<TokenId>, f64) {
    let words: Vec<TokenId> = (0..scorer.vocab_size() as TokenId).filter(|&t| t != PAD && t != BOS && t != EOS).collect();
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut consider = |tokens: Vec<TokenId>, lp: f64| {
        let s = if alpha == 0.0 { lp } else { lp / (tokens.len().max(1) as f64).powf(alpha) };
        let better = match &best {
            None => true,
            Some((bt, bs)) => s > *bs || (s == *bs && tokens < *bt),
        };
        if better {
            best = Some((tokens, s));
        }
    };
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        let mut input = vec![BOS];
        input.extend(&prefix);
        let dist = scorer.log_probs(&input).unwrap();
        let mut with_eos = prefix.clone();
        with_eos.push(EOS);
        consider(with_eos, lp + dist[EOS as usize]);
        for &w in &words {
            let mut next = prefix.clone();
            next.push(w);
            let nlp = lp + dist[w as usize];
            if next.len() == max_len {
                consider(next, nlp);
            } else {
                stack.push((next, nlp));
            }
        }
    }
    best.unwrap()
}

/// Deterministic pseudo-random next-token distributions keyed by prefix.
pub struct HashScorer {
    pub vocab: usize,
    pub salt: u64,
}

impl TokenScorer for HashScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, prefix: &[TokenId]) -> mtsm::Result<Vec<f64>> {
        let mut r = rng(prefix.iter().fold(self.salt, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 7)));
        let logits: Vec<f64> = (0..self.vocab).map(|_| r.random_range(-3.0..3.0)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        Ok(logits.iter().map(|l| l - z).collect())
    }
}
