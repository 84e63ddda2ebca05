use std::collections::HashMap;
use std::path::Path;

use super::{read_lines, RESERVED, UNK};
use crate::{Error, Result};

/// Token/id bijection. Ids 0..4 are reserved for pad, start, end and unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Vocabulary holding the reserved entries followed by `words` in order.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.as_ref().to_owned()));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Maps ids back to tokens, dropping reserved markers other than unknown.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().filter(|&&id| id >= UNK).map(|&id| self.tokens[id].clone()).collect()
    }

    /// Non-reserved entries, in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words().join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let words: Vec<String> = read_lines(path)?.into_iter().filter(|l| !l.is_empty()).collect();
        Self::from_words(&words)
    }
}

/// Keeps the `max_size - 4` most frequent tokens; equal counts are ordered
/// lexicographically. Everything else maps to unknown.
pub fn build_vocab<S: AsRef<str>>(sentences: &[Vec<S>], max_size: usize) -> Result<Vocab> {
    if max_size <= RESERVED.len() {
        return Err(Error::OutOfRange { name: "max_size", value: max_size as f64, range: "(4, inf)" });
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for w in s {
            let w = w.as_ref();
            if !RESERVED.contains(&w) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(max_size - RESERVED.len());
    let words: Vec<&str> = entries.into_iter().map(|(w, _)| w).collect();
    Vocab::from_words(&words)
}
