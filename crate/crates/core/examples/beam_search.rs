//! Greedy decoding against beam search on a hand-written next-token table
//! where the locally best first word leads to a worse sentence.
//!
//! ```text
//! cargo run --example beam_search
//! ```

use mtsm::data::{TokenId, BOS, EOS};
use mtsm::decoding::{beam_search, greedy_search, TokenScorer};

const A: TokenId = 4;
const B: TokenId = 5;
const NAMES: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<unk>", "a", "b"];

struct Table;

impl TokenScorer for Table {
    fn vocab_size(&self) -> usize {
        NAMES.len()
    }

    fn log_probs(&self, prefix: &[TokenId]) -> mtsm::Result<Vec<f64>> {
        let mut p = [1e-9f64; 6];
        match prefix.last() {
            Some(&BOS) => (p[A as usize], p[B as usize]) = (0.6, 0.4),
            Some(&A) => (p[EOS as usize], p[A as usize], p[B as usize]) = (0.35, 0.35, 0.3),
            _ => (p[EOS as usize], p[A as usize]) = (0.95, 0.05),
        }
        Ok(p.iter().map(|v| v.ln()).collect())
    }
}

fn show(label: &str, tokens: &[TokenId], log_prob: f64) {
    let words: Vec<&str> = tokens.iter().map(|&t| NAMES[t as usize]).collect();
    println!("{label:<8} {:<16} log p = {log_prob:.4}", words.join(" "));
}

fn main() -> mtsm::Result<()> {
    let greedy = greedy_search(&Table, 4)?;
    show("greedy", &greedy.tokens, greedy.log_prob);
    for width in [2, 3] {
        let beam = beam_search(&Table, width, 4, 0.0)?;
        show(&format!("beam-{width}"), &beam.tokens, beam.log_prob);
    }
    Ok(())
}
