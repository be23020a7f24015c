//! Text normalization: tokenization, stemming, stopword removal, tf-idf
//! vectors and near-duplicate removal.

mod porter;
mod tfidf;

use std::collections::HashSet;
use std::path::Path;

pub use tfidf::{dedup, dedup_indices, tfidf_vectorize, DedupOutcome, SparseVector, Vocabulary, DEFAULT_DEDUP_THRESHOLD};

use crate::error::{Error, Result};

/// Lowercases, splits on non-alphanumeric characters and drops tokens
/// shorter than two characters. Digit-only tokens are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().nth(1).is_some())
        .map(str::to_string)
        .collect()
}

/// Maps a token to its normalized form. This is where a dictionary
/// lemmatizer would plug in.
pub trait Normalizer: Send + Sync {
    fn normalize(&self, token: &str) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PorterStemmer;

impl Normalizer for PorterStemmer {
    fn normalize(&self, token: &str) -> String {
        porter::stem(token)
    }
}

pub fn normalize_token(token: &str) -> String {
    porter::stem(token)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stoplist {
    words: HashSet<String>,
}

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

impl Stoplist {
    /// One token per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Stoplist { words }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    /// The English list shipped with the crate.
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    /// The words in sorted order.
    pub fn sorted(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.words.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stoplist {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Stoplist {
            words: iter.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn remove_stopwords(tokens: Vec<String>, stoplist: &Stoplist) -> Vec<String> {
    tokens.into_iter().filter(|t| !stoplist.contains(t)).collect()
}

/// The full chain: tokenize, drop stopwords, normalize.
pub struct Preprocessor {
    stoplist: Stoplist,
    normalizer: Box<dyn Normalizer>,
}

impl Preprocessor {
    pub fn new(stoplist: Stoplist, normalizer: Box<dyn Normalizer>) -> Self {
        Preprocessor {
            stoplist,
            normalizer,
        }
    }

    pub fn with_stoplist(stoplist: Stoplist) -> Self {
        Self::new(stoplist, Box::new(PorterStemmer))
    }

    pub fn stoplist(&self) -> &Stoplist {
        &self.stoplist
    }

    pub fn process(&self, text: &str) -> Vec<String> {
        remove_stopwords(tokenize(text), &self.stoplist)
            .iter()
            .map(|t| self.normalizer.normalize(t))
            .collect()
    }
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::with_stoplist(Stoplist::english())
    }
}
