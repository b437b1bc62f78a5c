//! Writes synthetic detections to disk, then reads them back through the
//! score filter, both in one go and streaming.
//!
//! ```text
//! cargo run --example detections_io -- [dir]
//! ```

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use mtsm::data::{read_detections, synth_corpus, write_detections, DetectionFilter, DetectionReader};

fn main() -> mtsm::Result<()> {
    let dir: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let path = dir.join("mtsm-detections.jsonl");

    let corpus = synth_corpus(3, 5, 8)?;
    write_detections(&path, corpus.iter().map(|(d, _)| d))?;
    // An image whose only box falls below the default 0.7 score threshold.
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).map_err(|e| mtsm::Error::io(&path, e))?;
    writeln!(f, r#"{{"image_id":"faint","boxes":[[0.5,0.5,0.2,0.2]],"scores":[0.4],"features":[[0,0,0,0,0,0,0,0]]}}"#)
        .map_err(|e| mtsm::Error::io(&path, e))?;
    drop(f);

    let loaded = read_detections(&path, DetectionFilter::default())?;
    println!("{}: {} images kept, {} skipped", path.display(), loaded.sets.len(), loaded.skipped);
    for set in &loaded.sets {
        println!("  {:<28} {} boxes, {}-dim features", set.image_id, set.len(), set.feature_dim());
    }

    // Streaming keeps at most two boxes per image and accepts lower scores.
    let file = File::open(&path).map_err(|e| mtsm::Error::io(&path, e))?;
    let filter = DetectionFilter { min_score: 0.3, max_objects: 2 };
    let mut reader = DetectionReader::new(BufReader::new(file), path.display().to_string(), filter);
    for set in reader.by_ref() {
        let set = set?;
        println!("  stream {:<28} scores {:?}", set.image_id, set.scores);
    }
    println!("streaming skipped {}", reader.skipped());
    Ok(())
}
