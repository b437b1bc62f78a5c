//! Corpus BLEU-1..4 on a handful of captions, with and without smoothing.
//!
//! ```text
//! cargo run --example bleu_eval
//! ```

use mtsm::data::preprocess_caption;
use mtsm::metrics::{corpus_bleu, corpus_bleu_with, BleuReport, Smoothing};

fn main() -> mtsm::Result<()> {
    let data = [
        ("A red square left of a blue circle.", vec!["a red square to the left of a blue circle", "red square beside a blue circle"]),
        ("a yellow triangle above a green square", vec!["a yellow triangle above a green square"]),
        ("two circles", vec!["a blue circle below a red circle", "two circles stacked vertically"]),
    ];
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for (cand, rs) in &data {
        cands.push(preprocess_caption(cand)?);
        refs.push(rs.iter().map(|r| preprocess_caption(r)).collect::<mtsm::Result<Vec<_>>>()?);
    }
    let plain = corpus_bleu(&cands, &refs)?;
    let smooth = corpus_bleu_with(&cands, &refs, Smoothing::AddOne)?;
    print!("{}", BleuReport::table(&[("plain", &plain), ("add-one", &smooth)]));
    println!("matches {:?} of {:?}, brevity penalty {:.4}", plain.matches, plain.totals, plain.brevity_penalty);
    Ok(())
}
