//! Memorise a small synthetic spatial-relation corpus with the tiny model,
//! then caption the training scenes greedily.
//!
//! ```text
//! cargo run --release --example synthetic_captioning -- [scenes] [epochs]
//! ```

use mtsm::data::{synth_corpus, CaptionLine, Vocabulary};
use mtsm::decoding::greedy_decode;
use mtsm::model::{CaptionModel, ModelConfig};
use mtsm::training::{pair_examples, TrainConfig, TrainOutputs, Trainer};

fn main() -> mtsm::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);

    let probe = ModelConfig::tiny(0);
    let corpus = synth_corpus(7, scenes, probe.d_feat)?;
    // One canonical caption per scene: greedy decoding can only reproduce one.
    let captions: Vec<CaptionLine> = corpus
        .iter()
        .map(|(det, caps)| CaptionLine {
            image_id: det.image_id.clone(),
            caption: caps[0].clone(),
        })
        .collect();
    let vocab = Vocabulary::build(captions.iter().map(|c| c.caption.as_str()), 1)?;
    let sets: Vec<_> = corpus.into_iter().map(|(d, _)| d).collect();
    let data = pair_examples(&sets, &captions, &vocab)?;

    let model = CaptionModel::new(ModelConfig::tiny(vocab.len()), 7)?;
    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::tiny()
    };
    let mut trainer = Trainer::new(model, vocab.clone(), cfg, 7)?;
    trainer.run_with(&data, &TrainOutputs::default(), |e| {
        if e.epoch % 25 == 0 || e.epoch + 1 == epochs {
            println!("epoch {:>4}  loss {:.4}  lr {:.2e}", e.epoch, e.mean_loss, e.lr);
        }
    })?;

    let mut exact = 0;
    for (det, cap) in sets.iter().zip(&captions) {
        let out = vocab.decode(&greedy_decode(trainer.model(), det, 51)?)?.join(" ");
        exact += usize::from(out == cap.caption);
    }
    println!("exact reproductions: {exact}/{}", sets.len());
    Ok(())
}
