use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::training::{AdamState, TrainConfig};

use super::{CaptionModel, ModelConfig, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or caption: weights, configs,
/// vocabulary, optimizer moments, completed epoch count and seeds.
///
/// Stored as JSON; `f64` values round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub optimizer: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub init_seed: u64,
}

impl Checkpoint {
    pub fn model(&self) -> Result<CaptionModel> {
        CaptionModel::from_parts(self.model_config.clone(), self.params.clone())
    }

    /// Writes to a sibling temporary file, syncs it, then renames over `path`.
    /// The temporary file is removed on failure.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = tmp_path(path);
        let result = (|| {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer(&mut w, self).map_err(|e| Error::Checkpoint(e.to_string()))?;
            w.flush().map_err(|e| Error::io(&tmp, e))?;
            w.get_ref().sync_all().map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.model_config.vocab_size != ck.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "vocab_size {} disagrees with stored vocabulary of {}",
                ck.model_config.vocab_size,
                ck.vocab.len()
            )));
        }
        CaptionModel::from_parts(ck.model_config.clone(), ck.params.clone())?;
        Ok(ck)
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
