//! Exact n-gram counting over the corpus store.
//!
//! Two structures back the counts:
//!
//! * a token-level suffix array over all documents joined with a boundary
//!   sentinel, answering occurrence counts for sequences of any length;
//! * document postings for every n-gram with `n <= n_pair_max`, answering
//!   document frequencies and pair co-occurrence by intersection.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::error::{Error, Result};
use crate::ngram::{NGram, NGramPair};
use crate::suffix_array::{build_suffix_array, matching_range};
use crate::util;

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_N_PAIR_MAX: usize = 8;

/// Separates documents in the concatenated text. Never a vocabulary id.
const SENTINEL: u32 = u32::MAX;

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
struct IndexHeader {
    format_version: u32,
    content_digest: String,
    n_pair_max: usize,
    text_len: usize,
    postings_keys: usize,
}

/// Result of backing off a context to its longest suffix seen in the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SuffixMatch {
    /// Length of the matched context suffix (the prefix of the predicted token).
    pub suffix_len: usize,
    /// Occurrences of that suffix; 0 when not even the last context token is seen.
    pub count: u64,
}

impl SuffixMatch {
    /// Size of the n-gram used for prediction: the matched prefix plus the token.
    pub fn n_i(&self) -> usize {
        self.suffix_len + 1
    }
}

pub struct CorpusIndex {
    store: CorpusStore,
    text: Vec<u32>,
    sa: Vec<u32>,
    /// Start of each document inside `text`, plus the total length.
    text_offsets: Vec<u32>,
    postings: HashMap<Box<[u32]>, Vec<u32>>,
    n_pair_max: usize,
}

impl CorpusIndex {
    pub fn build(store: CorpusStore, n_pair_max: usize) -> Result<Self> {
        if store.document_count() == 0 || store.token_count() == 0 {
            return Err(Error::Empty("cannot index an empty corpus".into()));
        }
        if n_pair_max == 0 {
            return Err(Error::InvalidArgument("n_pair_max must be at least 1".into()));
        }
        let (text, text_offsets) = joined_text(&store);
        let sa = build_suffix_array(&text);
        let postings = build_postings(&store, n_pair_max);
        Ok(CorpusIndex {
            store,
            text,
            sa,
            text_offsets,
            postings,
            n_pair_max,
        })
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    pub fn n_pair_max(&self) -> usize {
        self.n_pair_max
    }

    pub fn total_tokens(&self) -> u64 {
        self.store.token_count() as u64
    }

    pub fn suffix_array(&self) -> &[u32] {
        &self.sa
    }

    pub fn postings_len(&self) -> usize {
        self.postings.len()
    }

    fn encode(&self, g: &NGram) -> Option<Vec<u32>> {
        self.store.encode(g.tokens())
    }

    fn sa_range(&self, ids: &[u32]) -> Range<usize> {
        matching_range(&self.text, &self.sa, ids)
    }

    /// Occurrence count of an id sequence anywhere in the corpus.
    pub fn count_ids(&self, ids: &[u32]) -> u64 {
        self.sa_range(ids).len() as u64
    }

    pub fn count_occurrences(&self, g: &NGram) -> u64 {
        self.encode(g).map_or(0, |ids| self.count_ids(&ids))
    }

    fn check_bound(&self, g: &NGram) -> Result<()> {
        if g.n() > self.n_pair_max {
            return Err(Error::LengthBound {
                len: g.n(),
                max: self.n_pair_max,
            });
        }
        Ok(())
    }

    fn postings_for(&self, g: &NGram) -> Result<&[u32]> {
        self.check_bound(g)?;
        Ok(self
            .encode(g)
            .and_then(|ids| self.postings.get(ids.as_slice()))
            .map_or(&[][..], |v| v.as_slice()))
    }

    /// Sorted ids of documents containing `g`. Requires `n <= n_pair_max`.
    pub fn documents_containing(&self, g: &NGram) -> Result<Vec<u32>> {
        self.postings_for(g).map(<[u32]>::to_vec)
    }

    pub fn doc_frequency(&self, g: &NGram) -> Result<u64> {
        self.postings_for(g).map(|p| p.len() as u64)
    }

    pub fn count_pair_cooccurrence(&self, p: &NGramPair) -> Result<u64> {
        let a = self.postings_for(&p.source)?;
        let b = self.postings_for(&p.target)?;
        Ok(intersection_size(a, b) as u64)
    }

    pub fn find_documents_with_pair(&self, p: &NGramPair, limit: usize) -> Result<Vec<u32>> {
        let a = self.postings_for(&p.source)?;
        let b = self.postings_for(&p.target)?;
        let mut out = intersect(a, b);
        out.truncate(limit);
        Ok(out)
    }

    /// Sorted ids of documents containing `g`: postings within the bound,
    /// the suffix array beyond it.
    pub fn documents_for(&self, g: &NGram) -> Vec<u32> {
        match self.postings_for(g) {
            Ok(p) => p.to_vec(),
            Err(_) => self.documents_containing_any(g),
        }
    }

    /// Pair co-occurrence without the `n_pair_max` restriction.
    pub fn count_pair_cooccurrence_any(&self, p: &NGramPair) -> u64 {
        intersection_size(&self.documents_for(&p.source), &self.documents_for(&p.target)) as u64
    }

    fn doc_of_text_pos(&self, pos: u32) -> u32 {
        (self.text_offsets.partition_point(|&o| o <= pos) - 1) as u32
    }

    /// Sorted ids of documents containing an id sequence of any length, read
    /// off the suffix array.
    pub fn documents_containing_ids(&self, ids: &[u32]) -> Vec<u32> {
        let mut docs: Vec<u32> = self.sa[self.sa_range(ids)]
            .iter()
            .map(|&p| self.doc_of_text_pos(p))
            .collect();
        docs.sort_unstable();
        docs.dedup();
        docs
    }

    /// Sorted ids of documents containing `g`, for any length.
    pub fn documents_containing_any(&self, g: &NGram) -> Vec<u32> {
        self.encode(g)
            .map(|ids| self.documents_containing_ids(&ids))
            .unwrap_or_default()
    }

    /// Longest suffix of `context` occurring in the corpus.
    pub fn longest_suffix_context<S: AsRef<str>>(&self, context: &[S]) -> Result<SuffixMatch> {
        if context.is_empty() {
            return Err(Error::InvalidArgument("context must be non-empty".into()));
        }
        let ids: Vec<Option<u32>> = context.iter().map(|w| self.store.vocab().id(w.as_ref())).collect();
        Ok(self.longest_suffix_ids(&ids))
    }

    /// Id-level backoff. `None` marks an out-of-vocabulary token.
    pub(crate) fn longest_suffix_ids(&self, context: &[Option<u32>]) -> SuffixMatch {
        let mut best = SuffixMatch {
            suffix_len: 0,
            count: 0,
        };
        let mut suffix: Vec<u32> = Vec::new();
        // Counts never grow as the suffix extends, so stop at the first zero.
        for tok in context.iter().rev() {
            let Some(id) = tok else { break };
            suffix.insert(0, *id);
            let count = self.count_ids(&suffix);
            if count == 0 {
                break;
            }
            best = SuffixMatch {
                suffix_len: suffix.len(),
                count,
            };
        }
        best
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.store.save(dir)?;
        let idx_dir = dir.join("index");
        util::write_all(&idx_dir.join("sa.bin"), &util::u32s_to_le(&self.sa))?;
        util::write_all(&idx_dir.join("postings.bin"), &encode_postings(&self.postings))?;
        let header = IndexHeader {
            format_version: INDEX_FORMAT_VERSION,
            content_digest: self.store.manifest().content_digest.clone(),
            n_pair_max: self.n_pair_max,
            text_len: self.text.len(),
            postings_keys: self.postings.len(),
        };
        util::write_all(&idx_dir.join("header.json"), &serde_json::to_vec_pretty(&header)?)
    }

    /// Loads a previously saved store and index.
    pub fn load(dir: &Path) -> Result<Self> {
        let store = CorpusStore::load(dir)?;
        let idx_dir = dir.join("index");
        let header: IndexHeader =
            serde_json::from_slice(&util::read_all(&idx_dir.join("header.json"))?)?;
        if header.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported index format version {}",
                header.format_version
            )));
        }
        if header.content_digest != store.manifest().content_digest {
            return Err(Error::Format("index was built for a different corpus".into()));
        }
        let (text, text_offsets) = joined_text(&store);
        let sa = util::le_to_u32s(&util::read_all(&idx_dir.join("sa.bin"))?)?;
        let postings = decode_postings(&util::read_all(&idx_dir.join("postings.bin"))?)?;
        if sa.len() != text.len() || header.text_len != text.len() || postings.len() != header.postings_keys {
            return Err(Error::Format("index files are inconsistent".into()));
        }
        Ok(CorpusIndex {
            store,
            text,
            sa,
            text_offsets,
            postings,
            n_pair_max: header.n_pair_max,
        })
    }

    /// Loads the index under `dir`, rebuilding it when it is missing, stale
    /// or was built with a different `n_pair_max`.
    pub fn load_or_build(dir: &Path, n_pair_max: usize) -> Result<Self> {
        match Self::load(dir) {
            Ok(idx) if idx.n_pair_max == n_pair_max => Ok(idx),
            _ => {
                log::info!("rebuilding index under {}", dir.display());
                let idx = Self::build(CorpusStore::load(dir)?, n_pair_max)?;
                idx.save(dir)?;
                Ok(idx)
            }
        }
    }

    /// True when `dir` holds an index matching its store and `n_pair_max`.
    pub fn is_current(dir: &Path, n_pair_max: usize) -> bool {
        let Ok(manifest) = crate::corpus::read_manifest(dir) else {
            return false;
        };
        let Ok(bytes) = util::read_all(&dir.join("index").join("header.json")) else {
            return false;
        };
        let Ok(header) = serde_json::from_slice::<IndexHeader>(&bytes) else {
            return false;
        };
        header.format_version == INDEX_FORMAT_VERSION
            && header.content_digest == manifest.content_digest
            && header.n_pair_max == n_pair_max
    }
}

fn joined_text(store: &CorpusStore) -> (Vec<u32>, Vec<u32>) {
    let n_docs = store.document_count();
    let mut text = Vec::with_capacity(store.token_count() + n_docs);
    let mut offsets = Vec::with_capacity(n_docs + 1);
    for d in 0..n_docs as u32 {
        offsets.push(text.len() as u32);
        text.extend_from_slice(store.doc_tokens(d));
        text.push(SENTINEL);
    }
    offsets.push(text.len() as u32);
    (text, offsets)
}

fn build_postings(store: &CorpusStore, n_max: usize) -> HashMap<Box<[u32]>, Vec<u32>> {
    let per_doc: Vec<Vec<&[u32]>> = (0..store.document_count() as u32)
        .into_par_iter()
        .map(|d| {
            let toks = store.doc_tokens(d);
            let mut grams: Vec<&[u32]> = (1..=n_max.min(toks.len()))
                .flat_map(|n| toks.windows(n))
                .collect();
            grams.sort_unstable();
            grams.dedup();
            grams
        })
        .collect();
    let mut postings: HashMap<Box<[u32]>, Vec<u32>> = HashMap::new();
    for (d, grams) in per_doc.into_iter().enumerate() {
        for g in grams {
            match postings.get_mut(g) {
                Some(list) => list.push(d as u32),
                None => {
                    postings.insert(g.into(), vec![d as u32]);
                }
            }
        }
    }
    postings
}

fn encode_postings(postings: &HashMap<Box<[u32]>, Vec<u32>>) -> Vec<u8> {
    let mut keys: Vec<&Box<[u32]>> = postings.keys().collect();
    keys.sort_unstable();
    let mut words = Vec::new();
    for k in keys {
        let docs = &postings[k];
        words.push(k.len() as u32);
        words.extend_from_slice(k);
        words.push(docs.len() as u32);
        words.extend_from_slice(docs);
    }
    util::u32s_to_le(&words)
}

fn decode_postings(bytes: &[u8]) -> Result<HashMap<Box<[u32]>, Vec<u32>>> {
    let words = util::le_to_u32s(bytes)?;
    let truncated = || Error::Format("truncated postings file".into());
    let mut out = HashMap::new();
    let mut i = 0;
    while i < words.len() {
        let n = words[i] as usize;
        let key = words.get(i + 1..i + 1 + n).ok_or_else(truncated)?;
        i += 1 + n;
        let len = *words.get(i).ok_or_else(truncated)? as usize;
        let docs = words.get(i + 1..i + 1 + len).ok_or_else(truncated)?;
        i += 1 + len;
        out.insert(key.into(), docs.to_vec());
    }
    Ok(out)
}

/// Intersection of two strictly increasing lists. Gallops through the longer
/// list when the sizes are lopsided.
pub fn intersect(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut out = Vec::with_capacity(small.len());
    if small.len() * 16 < large.len() {
        let mut rest = large;
        for &x in small {
            match rest.binary_search(&x) {
                Ok(i) => {
                    out.push(x);
                    rest = &rest[i + 1..];
                }
                Err(i) => rest = &rest[i..],
            }
        }
        return out;
    }
    let (mut i, mut j) = (0, 0);
    while i < small.len() && j < large.len() {
        match small[i].cmp(&large[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(small[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

pub fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    intersect(a, b).len()
}
