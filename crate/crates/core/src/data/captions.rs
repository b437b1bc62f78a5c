use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::text::MAX_CAPTION_WORDS;
use super::vocab::{TokenId, Vocabulary};

/// One line of a captions file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub image_id: String,
    pub caption: String,
}

/// A caption ready for training: ids are `BOS w_1 … w_k EOS` with `k <= 51`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub raw: String,
    pub tokens: Vec<TokenId>,
}

impl CaptionRecord {
    pub fn new(line: &CaptionLine, vocab: &Vocabulary) -> Result<Self> {
        let tokens = vocab.encode_caption(&line.caption)?;
        debug_assert!(tokens.len() <= MAX_CAPTION_WORDS + 2);
        Ok(CaptionRecord {
            image_id: line.image_id.clone(),
            raw: line.caption.clone(),
            tokens,
        })
    }
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionLine>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("{e} (column {})", e.column()),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_captions<'a>(path: &Path, lines: impl IntoIterator<Item = &'a CaptionLine>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        let json = serde_json::to_string(line).expect("caption line serialises");
        writeln!(w, "{json}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
