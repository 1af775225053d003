use serde::{Deserialize, Serialize};

use super::bpe::MergeTable;
use crate::error::{Error, Result};

const DETACHED_PUNCTUATION: [char; 5] = ['.', ',', '!', '?', ';'];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    Word,
    Char,
    Bpe,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub bpe_vocab_size: usize,
    pub lowercase: bool,
}

impl TokenizerConfig {
    pub fn word() -> Self {
        Self { mode: TokenizerMode::Word, bpe_vocab_size: 1000, lowercase: false }
    }
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self::word()
    }
}

/// A tokenizer configuration bound to its merge table (bpe mode only).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    config: TokenizerConfig,
    merges: Option<MergeTable>,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig, merges: Option<MergeTable>) -> Result<Self> {
        if config.mode == TokenizerMode::Bpe {
            if merges.is_none() {
                return Err(Error::BpeNotTrained);
            }
            if config.bpe_vocab_size == 0 {
                return Err(Error::Config("bpe_vocab_size must be positive".into()));
            }
        }
        Ok(Self { config, merges })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn merges(&self) -> Option<&MergeTable> {
        self.merges.as_ref()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        let lowered;
        let text = if self.config.lowercase {
            lowered = text.to_lowercase();
            lowered.as_str()
        } else {
            text
        };
        let tokens = match self.config.mode {
            TokenizerMode::Word => word_tokens(text),
            TokenizerMode::Char => {
                text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
            }
            TokenizerMode::Bpe => {
                let merges = self.merges.as_ref().ok_or(Error::BpeNotTrained)?;
                text.split_whitespace().flat_map(|w| merges.apply_word(w)).collect()
            }
        };
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(tokens)
    }
}

fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let core = word.trim_end_matches(DETACHED_PUNCTUATION);
        if !core.is_empty() {
            tokens.push(core.to_string());
        }
        tokens.extend(word[core.len()..].chars().map(String::from));
    }
    tokens
}

/// Inverse of word tokenization on normalized text: punctuation re-attaches
/// to the preceding token.
pub fn detokenize_words(tokens: &[String]) -> String {
    let mut out = String::new();
    for token in tokens {
        let is_punct = token.chars().count() == 1
            && token.chars().all(|c| DETACHED_PUNCTUATION.contains(&c));
        if !out.is_empty() && !is_punct {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}
