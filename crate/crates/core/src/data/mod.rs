//! Caption text handling, vocabulary, detection files and the synthetic
//! spatial-relation scene generator.

mod captions;
mod detections;
mod synth;
mod text;
mod vocab;

pub use captions::{read_captions, write_captions, CaptionLine, CaptionRecord};
pub use detections::{
    read_detections, write_detections, DetectionFilter, DetectionReader, DetectionRecord, DetectionSet, LoadedDetections,
    MAX_OBJECTS, SCORE_THRESHOLD,
};
pub use synth::{describe_scene, synth_corpus, synth_scene, Color, SceneObject, Shape, RELATION_MARGIN};
pub use text::{preprocess_caption, MAX_CAPTION_WORDS};
pub use vocab::{TokenId, Vocabulary, BOS, DEFAULT_MIN_COUNT, EOS, NUM_RESERVED, PAD, UNK};
