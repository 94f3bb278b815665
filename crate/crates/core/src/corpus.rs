//! Corpus ingestion, word tokenization and the persisted token store.
//!
//! Documents arrive as JSONL (`{"text": ..., "meta": {...}}`), are tokenized
//! into lowercased word tokens with standalone punctuation, interned into a
//! vocabulary and stored as one concatenated `u32` stream with per-document
//! offsets. The store is immutable once built.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{self, for_each_jsonl_line, sha256_hex};

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { lowercase: true }
    }
}

impl TokenizerConfig {
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Splits `text` into word tokens.
///
/// Whitespace separates chunks; within a chunk, leading and trailing
/// non-alphanumeric characters each become their own token while the
/// middle (which may contain apostrophes, hyphens, ...) stays whole.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    tokenize_with_offsets(text, config)
        .into_iter()
        .map(|(tok, _)| tok)
        .collect()
}

/// Like [`tokenize`], also returning each token's character range (in
/// Unicode scalar values) within `text`.
pub fn tokenize_with_offsets(
    text: &str,
    config: &TokenizerConfig,
) -> Vec<(String, Range<usize>)> {
    // Lowercase per character first so segmentation sees the final form;
    // this keeps tokenization idempotent on its own joined output.
    let mut chars: Vec<(char, usize)> = Vec::with_capacity(text.len());
    for (idx, c) in text.chars().enumerate() {
        if config.lowercase {
            chars.extend(c.to_lowercase().map(|l| (l, idx)));
        } else {
            chars.push((c, idx));
        }
    }

    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].0.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].0.is_whitespace() {
            i += 1;
        }
        split_chunk(&chars[start..i], &mut out);
    }
    out
}

fn split_chunk(chunk: &[(char, usize)], out: &mut Vec<(String, Range<usize>)>) {
    let single = |&(c, idx): &(char, usize)| (c.to_string(), idx..idx + 1);
    let lead = chunk.iter().take_while(|(c, _)| !c.is_alphanumeric()).count();
    if lead == chunk.len() {
        out.extend(chunk.iter().map(single));
        return;
    }
    let trail = chunk
        .iter()
        .rev()
        .take_while(|(c, _)| !c.is_alphanumeric())
        .count();
    out.extend(chunk[..lead].iter().map(single));
    let word = &chunk[lead..chunk.len() - trail];
    let text: String = word.iter().map(|(c, _)| *c).collect();
    out.push((text, word[0].1..word[word.len() - 1].1 + 1));
    out.extend(chunk[chunk.len() - trail..].iter().map(single));
}

/// Tokens and optional metadata of one parsed line.
type ParsedDoc = (Vec<String>, Option<BTreeMap<String, String>>);

/// A raw corpus document as parsed from JSONL.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: u32,
    pub text: String,
    pub meta: Option<BTreeMap<String, String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub doc_id: u32,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub corpus_id: String,
    pub document_count: usize,
    pub token_count: usize,
    pub tokenizer: TokenizerConfig,
    pub tokenizer_digest: String,
    /// sha256 of the ingested source file, used to skip redundant rebuilds.
    pub source_digest: String,
    /// sha256 over the vocabulary and token streams.
    pub content_digest: String,
}

#[derive(Deserialize)]
struct CorpusLine {
    text: String,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
}

/// Interned word vocabulary. Ids are assigned in order of first appearance.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_owned());
        self.ids.insert(word.to_owned(), id);
        id
    }

    fn from_words(words: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Vocab { words, ids })
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// The immutable, tokenized corpus.
#[derive(Clone, Debug)]
pub struct CorpusStore {
    manifest: CorpusManifest,
    vocab: Vocab,
    tokens: Vec<u32>,
    /// `document_count + 1` offsets into `tokens`.
    doc_offsets: Vec<u32>,
    meta: Vec<Option<BTreeMap<String, String>>>,
}

impl CorpusStore {
    /// Tokenizes and interns a corpus JSONL file.
    pub fn ingest(path: &Path, config: &TokenizerConfig) -> Result<Self> {
        let mut lines = Vec::new();
        for_each_jsonl_line(path, |no, line| {
            lines.push((no, line.to_owned()));
            Ok(())
        })?;
        if lines.is_empty() {
            return Err(Error::Empty(format!("corpus file {} has no documents", path.display())));
        }

        let parsed: Vec<Result<ParsedDoc>> = lines
            .par_iter()
            .map(|(no, line)| {
                let doc: CorpusLine = serde_json::from_str(line).map_err(|e| Error::Line {
                    line: *no,
                    message: format!("malformed corpus record: {e}"),
                })?;
                let tokens = tokenize(&doc.text, config);
                if tokens.is_empty() {
                    return Err(Error::Line {
                        line: *no,
                        message: "document text is empty".into(),
                    });
                }
                Ok((tokens, doc.meta))
            })
            .collect();
        let mut docs = Vec::with_capacity(parsed.len());
        for p in parsed {
            docs.push(p?);
        }

        let source_digest = sha256_hex(&util::read_all(path)?);
        let corpus_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into());
        Self::from_tokenized(corpus_id, config.clone(), source_digest, docs)
    }

    /// Builds a store from in-memory texts. Empty texts are rejected.
    pub fn from_texts<S: AsRef<str>>(
        corpus_id: &str,
        texts: &[S],
        config: &TokenizerConfig,
    ) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::Empty("corpus has no documents".into()));
        }
        let mut docs = Vec::with_capacity(texts.len());
        for (i, t) in texts.iter().enumerate() {
            let tokens = tokenize(t.as_ref(), config);
            if tokens.is_empty() {
                return Err(Error::Line {
                    line: i + 1,
                    message: "document text is empty".into(),
                });
            }
            docs.push((tokens, None));
        }
        let source_digest = sha256_hex(
            texts
                .iter()
                .map(|t| t.as_ref())
                .collect::<Vec<_>>()
                .join("\n")
                .as_bytes(),
        );
        Self::from_tokenized(corpus_id.to_owned(), config.clone(), source_digest, docs)
    }

    fn from_tokenized(
        corpus_id: String,
        tokenizer: TokenizerConfig,
        source_digest: String,
        docs: Vec<ParsedDoc>,
    ) -> Result<Self> {
        let mut vocab = Vocab::default();
        let mut tokens = Vec::new();
        let mut doc_offsets = Vec::with_capacity(docs.len() + 1);
        let mut meta = Vec::with_capacity(docs.len());
        doc_offsets.push(0u32);
        for (words, m) in docs {
            tokens.extend(words.iter().map(|w| vocab.intern(w)));
            // One slot per token plus one sentinel per document must fit in u32.
            if tokens.len() + doc_offsets.len() >= u32::MAX as usize {
                return Err(Error::InvalidArgument("corpus exceeds 2^32 tokens".into()));
            }
            doc_offsets.push(tokens.len() as u32);
            meta.push(m);
        }
        let content_digest = content_digest(&vocab.words, &tokens, &doc_offsets);
        let manifest = CorpusManifest {
            format_version: STORE_FORMAT_VERSION,
            corpus_id,
            document_count: doc_offsets.len() - 1,
            token_count: tokens.len(),
            tokenizer_digest: tokenizer.digest(),
            tokenizer,
            source_digest,
            content_digest,
        };
        Ok(CorpusStore {
            manifest,
            vocab,
            tokens,
            doc_offsets,
            meta,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        util::write_all(&dir.join("vocab.json"), &serde_json::to_vec(&self.vocab.words)?)?;
        util::write_all(&dir.join("tokens.bin"), &util::u32s_to_le(&self.tokens))?;
        util::write_all(&dir.join("offsets.bin"), &util::u32s_to_le(&self.doc_offsets))?;
        let mut meta = String::new();
        for m in &self.meta {
            meta.push_str(&serde_json::to_string(m)?);
            meta.push('\n');
        }
        util::write_all(&dir.join("meta.jsonl"), meta.as_bytes())?;
        // Manifest last: its presence marks a complete store.
        util::write_all(
            &dir.join("manifest.json"),
            &serde_json::to_vec_pretty(&self.manifest)?,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported store format version {}",
                manifest.format_version
            )));
        }
        let words: Vec<String> = serde_json::from_slice(&util::read_all(&dir.join("vocab.json"))?)?;
        let tokens = util::le_to_u32s(&util::read_all(&dir.join("tokens.bin"))?)?;
        let doc_offsets = util::le_to_u32s(&util::read_all(&dir.join("offsets.bin"))?)?;
        let mut meta = Vec::new();
        for_each_jsonl_line(&dir.join("meta.jsonl"), |_, line| {
            meta.push(serde_json::from_str(line)?);
            Ok(())
        })?;
        let digest = content_digest(&words, &tokens, &doc_offsets);
        if digest != manifest.content_digest
            || doc_offsets.len() != manifest.document_count + 1
            || tokens.len() != manifest.token_count
        {
            return Err(Error::Format(format!(
                "store at {} does not match its manifest",
                dir.display()
            )));
        }
        Ok(CorpusStore {
            manifest,
            vocab: Vocab::from_words(words)?,
            tokens,
            doc_offsets,
            meta,
        })
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.manifest.tokenizer
    }

    pub fn document_count(&self) -> usize {
        self.doc_offsets.len() - 1
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn doc_offsets(&self) -> &[u32] {
        &self.doc_offsets
    }

    pub fn doc_tokens(&self, doc_id: u32) -> &[u32] {
        let d = doc_id as usize;
        &self.tokens[self.doc_offsets[d] as usize..self.doc_offsets[d + 1] as usize]
    }

    pub fn doc_meta(&self, doc_id: u32) -> Option<&BTreeMap<String, String>> {
        self.meta[doc_id as usize].as_ref()
    }

    pub fn tokenized(&self, doc_id: u32) -> TokenizedDocument {
        TokenizedDocument {
            doc_id,
            tokens: self
                .doc_tokens(doc_id)
                .iter()
                .map(|&t| self.vocab.word(t).to_owned())
                .collect(),
        }
    }

    /// Normalized token streams, one space-joined line per document.
    pub fn dump(&self) -> impl Iterator<Item = String> + '_ {
        (0..self.document_count() as u32).map(move |d| {
            self.doc_tokens(d)
                .iter()
                .map(|&t| self.vocab.word(t))
                .collect::<Vec<_>>()
                .join(" ")
        })
    }

    /// Maps word tokens to ids; `None` if any word is outside the vocabulary.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Option<Vec<u32>> {
        words.iter().map(|w| self.vocab.id(w.as_ref())).collect()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text, &self.manifest.tokenizer)
    }
}

fn content_digest(words: &[String], tokens: &[u32], offsets: &[u32]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for w in words {
        h.update((w.len() as u64).to_le_bytes());
        h.update(w.as_bytes());
    }
    h.update(util::u32s_to_le(tokens));
    h.update(util::u32s_to_le(offsets));
    hex::encode(h.finalize())
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let bytes = util::read_all(&dir.join("manifest.json"))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Ingests `path` and persists the store under `out_dir`.
pub fn ingest_corpus(path: &Path, config: &TokenizerConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let store = CorpusStore::ingest(path, config)?;
    store.save(out_dir)?;
    Ok(store.manifest.clone())
}

/// One supervised `(input, output)` example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub example_id: u32,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Deserialize)]
struct TaskLine {
    input: Option<String>,
    output: Option<String>,
    #[serde(default)]
    score: Option<f64>,
}

pub fn load_task_dataset(path: &Path) -> Result<Vec<TaskExample>> {
    let mut out = Vec::new();
    for_each_jsonl_line(path, |no, line| {
        let rec: TaskLine = serde_json::from_str(line).map_err(|e| Error::Line {
            line: no,
            message: format!("malformed task record: {e}"),
        })?;
        let field = |v: Option<String>, name: &str| match v {
            Some(s) if !s.trim().is_empty() => Ok(s),
            Some(_) => Err(Error::Line {
                line: no,
                message: format!("field \"{name}\" is empty"),
            }),
            None => Err(Error::Line {
                line: no,
                message: format!("missing field \"{name}\""),
            }),
        };
        let input = field(rec.input, "input")?;
        let output = field(rec.output, "output")?;
        if let Some(s) = rec.score {
            if !s.is_finite() {
                return Err(Error::Line {
                    line: no,
                    message: "score is not finite".into(),
                });
            }
        }
        out.push(TaskExample {
            example_id: out.len() as u32,
            input,
            output,
            score: rec.score,
        });
        Ok(())
    })?;
    Ok(out)
}
