//! Word-level vocabulary with fixed reserved slots.
//!
//! Cleaned text is punctuation-free, so whitespace tokenization is lossless
//! and `detokenize(tokenize(t)) == t` for in-vocabulary text.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const START: u32 = 2;
pub const UNK: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "</s>", "<s>", "<unk>"];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Build from corpus word frequencies: reserved slots first, then words
    /// by descending count with lexicographic tie-breaking, truncated to
    /// `max_size` total entries.
    pub fn build(corpus: &Corpus, max_size: usize) -> Result<Vocabulary> {
        if max_size < RESERVED.len() + 1 {
            return Err(Error::contract(format!(
                "vocabulary max_size {max_size} leaves no room beyond reserved tokens"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &corpus.reviews {
            for w in r.text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(w, _)| w.to_string()));
        Ok(Vocabulary::from_tokens(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved slots are always present
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    /// Whitespace split to ids; out-of-vocabulary words map to the unknown id.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Join token strings with single spaces, dropping pad/eos/start markers.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id != PAD && id != EOS && id != START)
            .filter_map(|&id| self.token(id))
            .collect();
        words.join(" ")
    }

    /// One token per line; line number (from 0) is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let content = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let tokens: Vec<String> = content.lines().map(|l| l.to_string()).collect();
        if tokens.len() < RESERVED.len() {
            return Err(Error::data(format!(
                "{}: vocabulary is missing reserved entries",
                path.display()
            )));
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if tokens[i] != *want {
                return Err(Error::data(format!(
                    "{}: reserved slot {i} is {:?}, expected {:?}",
                    path.display(),
                    tokens[i],
                    want
                )));
            }
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}
