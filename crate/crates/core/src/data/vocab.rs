use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::text::preprocess_caption;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_RESERVED: usize = 4;
pub const DEFAULT_MIN_COUNT: usize = 5;

const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const HEADER_TAG: &str = "#mtsm-vocab";

/// Token/id map. Ids `0..4` are reserved for PAD, BOS, EOS and UNK;
/// corpus tokens start at 4, ordered by descending count then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    min_count: usize,
    corpus_hash: String,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    min_count: usize,
    corpus_hash: String,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_parts(r.tokens, r.min_count, r.corpus_hash)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            min_count: v.min_count,
            corpus_hash: v.corpus_hash,
        }
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, min_count: usize, corpus_hash: String) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), (i + NUM_RESERVED) as TokenId))
            .collect();
        Vocabulary {
            tokens,
            index,
            min_count,
            corpus_hash,
        }
    }

    /// Counts preprocessed tokens over `corpus` and keeps those seen at least
    /// `min_count` times. Captions that clean to nothing are skipped.
    pub fn build<I, S>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut seen = 0usize;
        for caption in corpus {
            seen += 1;
            let Ok(tokens) = preprocess_caption(caption.as_ref()) else {
                continue;
            };
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        if seen == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut hasher = Sha256::new();
        for (tok, count) in &counts {
            hasher.update(format!("{tok}\t{count}\n").as_bytes());
        }
        let corpus_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();

        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = kept.into_iter().map(|(t, _)| t).collect();
        Ok(Vocabulary::from_parts(tokens, min_count, corpus_hash))
    }

    /// Total id space including reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + NUM_RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of corpus tokens, excluding reserved ids.
    pub fn num_words(&self) -> usize {
        self.tokens.len()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        let id = id as usize;
        if id < NUM_RESERVED {
            Some(RESERVED[id])
        } else {
            self.tokens.get(id - NUM_RESERVED).map(String::as_str)
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id).map(str::to_owned).ok_or(Error::Vocab {
                    id: id as usize,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// Cleans `text` and wraps its ids in BOS … EOS.
    pub fn encode_caption(&self, text: &str) -> Result<Vec<TokenId>> {
        let words = preprocess_caption(text)?;
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend(self.encode(&words));
        ids.push(EOS);
        Ok(ids)
    }

    /// Space-joined words, skipping PAD/BOS/EOS. UNK renders as `<unk>`.
    pub fn decode_caption(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Plain text: a header line with `min_count` and the corpus hash, then
    /// one token per line. The first token line holds id 4.
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER_TAG} min_count={} corpus_hash={}\n", self.min_count, self.corpus_hash);
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: source.to_owned(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(HEADER_TAG) {
            return Err(parse_err(1, format!("header must start with {HEADER_TAG}")));
        }
        let (mut min_count, mut corpus_hash) = (None, None);
        for field in fields {
            match field.split_once('=') {
                Some(("min_count", v)) => {
                    min_count = Some(v.parse().map_err(|_| parse_err(1, format!("bad min_count `{v}`")))?)
                }
                Some(("corpus_hash", v)) => corpus_hash = Some(v.to_owned()),
                _ => return Err(parse_err(1, format!("unknown header field `{field}`"))),
            }
        }
        let min_count = min_count.ok_or_else(|| parse_err(1, "header lacks min_count".into()))?;
        let corpus_hash = corpus_hash.ok_or_else(|| parse_err(1, "header lacks corpus_hash".into()))?;
        let mut tokens = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines.enumerate() {
            let tok = line.trim_end_matches('\r');
            let valid = !tok.is_empty() && tok.chars().all(|c| c.is_alphanumeric() && !c.is_uppercase());
            if !valid || !seen.insert(tok) {
                return Err(parse_err(i + 2, format!("invalid or duplicate token `{tok}`")));
            }
            tokens.push(tok.to_owned());
        }
        Ok(Vocabulary::from_parts(tokens, min_count, corpus_hash))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_text(&text, &path.display().to_string())
    }
}
