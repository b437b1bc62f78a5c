//! Corpus-level BLEU-1..4.
//!
//! `BLEU-n = BP · exp((1/n) Σ_{k≤n} ln p_k) · 100`, where `p_k` is the
//! corpus-wide clipped k-gram precision and `BP = 1` if `c > r`, otherwise
//! `exp(1 − r/c)`. `r` sums, per candidate, the reference length closest to
//! the candidate length (the shorter one on ties).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram totals, summed over the corpus.
pub fn modified_ngram_precision<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], n: usize) -> Result<(u64, u64)> {
    if n < 1 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    check_aligned(candidates, references)?;
    let (mut matches, mut total) = (0u64, 0u64);
    for (cand, refs) in candidates.iter().zip(references) {
        let (m, t) = sentence_ngram_stats(cand, refs, n);
        matches += m;
        total += t;
    }
    Ok((matches, total))
}

fn sentence_ngram_stats<T: Hash + Eq>(cand: &[T], refs: &[Vec<T>], n: usize) -> (u64, u64) {
    let counts = ngram_counts(cand, n);
    let mut max_ref: HashMap<&[T], usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let total: usize = counts.values().sum();
    let matches: usize = counts.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matches as u64, total as u64)
}

fn check_aligned<T>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::Config(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("candidate {i} has no references")));
    }
    Ok(())
}

/// Length of the reference closest to `c`, preferring the shorter on ties.
fn closest_ref_len<T>(c: usize, refs: &[Vec<T>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("references checked non-empty")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to matches and totals for orders above 1, so tiny corpora
    /// without any 4-gram match still get a non-zero score.
    AddOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub brevity_penalty: f64,
    pub candidate_length: u64,
    pub reference_length: u64,
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
}

impl BleuReport {
    pub fn scores(&self) -> [f64; MAX_ORDER] {
        [self.bleu_1, self.bleu_2, self.bleu_3, self.bleu_4]
    }

    /// Fixed-width table with one row per labelled report.
    pub fn table(rows: &[(&str, &BleuReport)]) -> String {
        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Algorithm".len());
        let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n", "Algorithm", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4");
        for (label, r) in rows {
            let _ = writeln!(
                out,
                "{label:<width$}  {:>7.1}  {:>7.1}  {:>7.1}  {:>7.1}",
                r.bleu_1, r.bleu_2, r.bleu_3, r.bleu_4
            );
        }
        out
    }
}

pub fn corpus_bleu<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<BleuReport> {
    corpus_bleu_with(candidates, references, Smoothing::None)
}

pub fn corpus_bleu_with<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], smoothing: Smoothing) -> Result<BleuReport> {
    check_aligned(candidates, references)?;
    if candidates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut c, mut r) = (0u64, 0u64);
    for (cand, refs) in candidates.iter().zip(references) {
        c += cand.len() as u64;
        r += closest_ref_len(cand.len(), refs) as u64;
        for n in 1..=MAX_ORDER {
            let (m, t) = sentence_ngram_stats(cand, refs, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    let bp = if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut log_p = [0.0f64; MAX_ORDER];
    for k in 0..MAX_ORDER {
        let (m, t) = match smoothing {
            Smoothing::AddOne if k > 0 => (matches[k] + 1, totals[k] + 1),
            _ => (matches[k], totals[k]),
        };
        log_p[k] = if m == 0 || t == 0 {
            f64::NEG_INFINITY
        } else {
            (m as f64 / t as f64).ln()
        };
    }
    let mut bleu = [0.0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let lp = &log_p[..n];
        bleu[n - 1] = if lp.iter().any(|v| v.is_infinite()) {
            0.0
        } else {
            bp * (lp.iter().sum::<f64>() / n as f64).exp() * 100.0
        };
    }
    Ok(BleuReport {
        bleu_1: bleu[0],
        bleu_2: bleu[1],
        bleu_3: bleu[2],
        bleu_4: bleu[3],
        brevity_penalty: bp,
        candidate_length: c,
        reference_length: r,
        matches,
        totals,
    })
}
