use crate::error::{Error, Result};

/// Longest caption kept, in words.
pub const MAX_CAPTION_WORDS: usize = 51;

/// Lowercases, deletes every character that is not alphanumeric or
/// whitespace, splits on whitespace and keeps at most
/// [`MAX_CAPTION_WORDS`] tokens. Contractions collapse (`it's` → `its`).
pub fn preprocess_caption(text: &str) -> Result<Vec<String>> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let tokens: Vec<String> = cleaned
        .split_whitespace()
        .take(MAX_CAPTION_WORDS)
        .map(str::to_owned)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyCaption);
    }
    Ok(tokens)
}
