use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
/// Separator placed before each paragraph of a merged document.
pub const PARSEP: usize = 4;

const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[PARSEP]"];

/// Dense token ↔ index map with five reserved entries at the front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Adds every token seen at least `min_count` times, most frequent
    /// first, ties in lexical order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Vocabulary::new();
        for (t, _) in ranked {
            v.add(t);
        }
        v
    }

    /// Character vocabulary over the characters of `words`.
    pub fn build_chars<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let chars: Vec<String> = words.into_iter().flat_map(|w| w.chars()).map(String::from).collect();
        Vocabulary::build(chars.iter().map(String::as_str), 1)
    }

    /// Keeps only the first `max_len` entries (never fewer than the
    /// reserved ones).
    pub fn truncated(mut self, max_len: usize) -> Self {
        let keep = max_len.max(RESERVED.len());
        for t in self.tokens.drain(keep.min(self.tokens.len())..) {
            self.index.remove(&t);
        }
        self
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn char_ids(&self, word: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        word.chars().map(|c| self.id(c.encode_utf8(&mut buf))).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// One token per line; the line number is the id.
    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Config("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_lines()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_indices() {
        let v = Vocabulary::new();
        assert_eq!(v.id("[PAD]"), PAD);
        assert_eq!(v.id("[CLS]"), CLS);
        assert_eq!(v.id("[SEP]"), SEP);
        assert_eq!(v.id("[PARSEP]"), PARSEP);
        assert_eq!(v.id("never-seen"), UNK);
    }

    #[test]
    fn build_is_frequency_then_lexical() {
        let v = Vocabulary::build(["b", "a", "c", "a", "b", "z"], 1);
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.token(6), Some("b"));
        assert_eq!(v.token(7), Some("c"));
        let v = Vocabulary::build(["b", "a", "a"], 2);
        assert_eq!(v.len(), 6);
        let v = Vocabulary::build(["b", "a", "c", "a"], 1).truncated(6);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn lines_round_trip() {
        let v = Vocabulary::build(["x", "y", "y"], 1);
        assert_eq!(Vocabulary::from_lines(&v.to_lines()).unwrap(), v);
        assert!(Vocabulary::from_lines("a\nb\n").is_err());
    }
}
