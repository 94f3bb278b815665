use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenizerConfig};
use crate::error::{Error, Result};

/// A non-empty sequence of word tokens.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct NGram(Vec<String>);

impl NGram {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("n-gram must have at least one token".into()));
        }
        Ok(NGram(tokens))
    }

    pub fn from_text(text: &str, config: &TokenizerConfig) -> Result<Self> {
        Self::new(tokenize(text, config))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<String>> for NGram {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        NGram::new(v)
    }
}

impl From<NGram> for Vec<String> {
    fn from(g: NGram) -> Self {
        g.0
    }
}

impl fmt::Display for NGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// An input-side n-gram paired with an output-side n-gram.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NGramPair {
    pub source: NGram,
    pub target: NGram,
}

impl NGramPair {
    pub fn new(source: NGram, target: NGram) -> Result<Self> {
        if source == target {
            return Err(Error::InvalidArgument(format!(
                "pair source and target are identical: {source}"
            )));
        }
        Ok(NGramPair { source, target })
    }
}

impl fmt::Display for NGramPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} => {})", self.source, self.target)
    }
}

/// All distinct contiguous length-`n` windows of `tokens`.
pub fn extract_ngrams(tokens: &[String], n: usize) -> BTreeSet<NGram> {
    if n == 0 {
        return BTreeSet::new();
    }
    tokens.windows(n).map(|w| NGram(w.to_vec())).collect()
}

pub fn extract_ngrams_from_text(text: &str, n: usize, config: &TokenizerConfig) -> BTreeSet<NGram> {
    extract_ngrams(&tokenize(text, config), n)
}

/// Position of the first occurrence of `needle` in `haystack`.
pub fn find_subsequence<T: PartialEq>(haystack: &[T], needle: &[T]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}
