//! Task-gram table mining.
//!
//! For every supervised example, all input n-grams are paired with all
//! output n-grams. Pairs whose embeddings are closer than `gamma` (and whose
//! sides differ) survive the similarity filter; the survivors are then
//! deduplicated and kept only if they co-occur in at least one corpus
//! document.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TaskExample, TokenizerConfig};
use crate::embedding::{cosine, embed_batch, BatchOptions, EmbeddingCache, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::index::CorpusIndex;
use crate::ngram::{extract_ngrams, NGram, NGramPair};
use crate::util::{self, for_each_jsonl_line};

pub const TABLE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CANDIDATE_CAP: usize = 20_000;

const THRESHOLDS_TOML: &str = include_str!("../config/thresholds.toml");

/// Per-family similarity thresholds, keyed by n-gram size.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTable {
    families: BTreeMap<String, BTreeMap<usize, f64>>,
}

impl ThresholdTable {
    /// The shipped defaults (WMT, TriviaQA, MMLU).
    pub fn defaults() -> Self {
        Self::parse(THRESHOLDS_TOML).expect("bundled thresholds parse")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, BTreeMap<String, f64>> =
            toml::from_str(text).map_err(|e| Error::Format(format!("thresholds: {e}")))?;
        let mut families = BTreeMap::new();
        for (family, by_n) in raw {
            let mut m = BTreeMap::new();
            for (n, gamma) in by_n {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::Format(format!("thresholds: bad n-gram size {n:?}")))?;
                check_gamma(gamma)?;
                m.insert(n, gamma);
            }
            families.insert(family.to_lowercase(), m);
        }
        Ok(ThresholdTable { families })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(util::read_all(path)?)
            .map_err(|e| Error::Format(format!("thresholds: {e}")))?;
        Self::parse(&text)
    }

    pub fn gamma(&self, family: &str, n: usize) -> Option<f64> {
        self.families.get(&family.to_lowercase())?.get(&n).copied()
    }

    pub fn families(&self) -> impl Iterator<Item = (&str, &BTreeMap<usize, f64>)> {
        self.families.iter().map(|(k, v)| (k.as_str(), v))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "similarity threshold must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MiningConfig {
    pub task_id: String,
    pub n: usize,
    pub gamma: f64,
    /// Treat the whole output text as the single target n-gram.
    pub whole_output_as_target: bool,
    pub candidate_cap: usize,
    pub batch: BatchOptions,
}

impl MiningConfig {
    pub fn new(task_id: impl Into<String>, n: usize, gamma: f64) -> Self {
        MiningConfig {
            task_id: task_id.into(),
            n,
            gamma,
            whole_output_as_target: false,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            batch: BatchOptions::default(),
        }
    }
}

/// One (input n-gram, output n-gram) combination from one example.
#[derive(Clone, Debug, PartialEq)]
pub struct PairCandidate {
    pub source: NGram,
    pub target: NGram,
    /// Cosine similarity, set once the candidate has been embedded.
    pub similarity: Option<f64>,
    pub example_id: u32,
}

/// Output-side n-grams of `tokens`, honoring the whole-output convention.
pub fn target_ngrams(tokens: &[String], n: usize, whole_output: bool) -> BTreeSet<NGram> {
    if whole_output {
        NGram::new(tokens.to_vec()).into_iter().collect()
    } else {
        extract_ngrams(tokens, n)
    }
}

/// Candidates for one example; lexicographically truncated at `cap`.
pub fn example_candidates(
    example_id: u32,
    input: &[String],
    output: &[String],
    n: usize,
    whole_output: bool,
    cap: usize,
) -> Vec<PairCandidate> {
    let xs = extract_ngrams(input, n);
    let ys = target_ngrams(output, n, whole_output);
    let total = xs.len() * ys.len();
    if total > cap {
        log::warn!("example {example_id}: {total} candidates truncated to {cap}");
    }
    xs.iter()
        .flat_map(|sx| ys.iter().map(move |sy| (sx, sy)))
        .take(cap)
        .map(|(sx, sy)| PairCandidate {
            source: sx.clone(),
            target: sy.clone(),
            similarity: None,
            example_id,
        })
        .collect()
}

pub fn generate_candidates(
    examples: &[TaskExample],
    config: &MiningConfig,
    tokenizer: &TokenizerConfig,
) -> Vec<PairCandidate> {
    examples
        .par_iter()
        .flat_map_iter(|ex| {
            example_candidates(
                ex.example_id,
                &tokenize(&ex.input, tokenizer),
                &tokenize(&ex.output, tokenizer),
                config.n,
                config.whole_output_as_target,
                config.candidate_cap,
            )
        })
        .collect()
}

/// Fills in `similarity` for every candidate, embedding each distinct
/// n-gram string once.
pub fn embed_candidates(
    candidates: &mut [PairCandidate],
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
    opts: BatchOptions,
) -> Result<()> {
    let texts: Vec<String> = candidates
        .iter()
        .flat_map(|c| [c.source.to_string(), c.target.to_string()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors = embed_batch(&texts, provider, cache, opts)?;
    let lookup: BTreeMap<&str, &[f32]> = texts
        .iter()
        .map(String::as_str)
        .zip(vectors.iter().map(|v| v.values.as_slice()))
        .collect();
    candidates.par_iter_mut().for_each(|c| {
        let a = lookup[c.source.to_string().as_str()];
        let b = lookup[c.target.to_string().as_str()];
        c.similarity = Some(cosine(a, b));
    });
    Ok(())
}

/// Keeps candidates with similarity strictly above `gamma` and distinct sides.
pub fn filter_by_similarity(candidates: Vec<PairCandidate>, gamma: f64) -> Result<Vec<PairCandidate>> {
    check_gamma(gamma)?;
    if candidates.iter().any(|c| c.similarity.is_none()) {
        return Err(Error::InvalidArgument("candidates must be embedded before filtering".into()));
    }
    Ok(candidates
        .into_iter()
        .filter(|c| c.similarity.is_some_and(|s| s > gamma) && c.source != c.target)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub format_version: u32,
    pub task_id: String,
    pub n: usize,
    pub gamma: f64,
    pub provider_id: String,
    pub corpus_digest: String,
    #[serde(default)]
    pub whole_output_as_target: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableEntry {
    pub pair: NGramPair,
    pub similarity: f64,
    pub pair_count: u64,
    pub sx_count: u64,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    sx: NGram,
    sy: NGram,
    sim: f64,
    pair_count: u64,
    sx_count: u64,
}

/// The mined table: unique pairs sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGramTable {
    pub header: TableHeader,
    pub entries: Vec<TableEntry>,
}

impl TaskGramTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(&EntryLine {
                sx: e.pair.source.clone(),
                sy: e.pair.target.clone(),
                sim: e.similarity,
                pair_count: e.pair_count,
                sx_count: e.sx_count,
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = util::create_writer(path)?;
        w.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut header: Option<TableHeader> = None;
        let mut entries = Vec::new();
        for_each_jsonl_line(path, |no, line| {
            let bad = |e: serde_json::Error| Error::Line {
                line: no,
                message: format!("malformed table line: {e}"),
            };
            if header.is_none() {
                let h: TableHeader = serde_json::from_str(line).map_err(bad)?;
                if h.format_version != TABLE_FORMAT_VERSION {
                    return Err(Error::Format(format!(
                        "unsupported table format version {}",
                        h.format_version
                    )));
                }
                header = Some(h);
                return Ok(());
            }
            let l: EntryLine = serde_json::from_str(line).map_err(bad)?;
            let pair = NGramPair::new(l.sx, l.sy).map_err(|e| Error::Line {
                line: no,
                message: e.to_string(),
            })?;
            entries.push(TableEntry {
                pair,
                similarity: l.sim,
                pair_count: l.pair_count,
                sx_count: l.sx_count,
            });
            Ok(())
        })?;
        let header = header.ok_or_else(|| Error::Empty(format!("table {} has no header", path.display())))?;
        Ok(TaskGramTable { header, entries })
    }
}

/// Deduplicates the filtered candidates, attaches corpus counts and drops
/// pairs that never co-occur.
pub fn build_table(filtered: &[PairCandidate], index: &CorpusIndex, header: TableHeader) -> TaskGramTable {
    let mut unique: BTreeMap<NGramPair, f64> = BTreeMap::new();
    for c in filtered {
        let Ok(pair) = NGramPair::new(c.source.clone(), c.target.clone()) else {
            continue;
        };
        let sim = c.similarity.unwrap_or(f64::NAN);
        unique
            .entry(pair)
            .and_modify(|s| *s = s.max(sim))
            .or_insert(sim);
    }
    let entries: Vec<TableEntry> = unique
        .into_par_iter()
        .filter_map(|(pair, similarity)| {
            let pair_count = index.count_pair_cooccurrence_any(&pair);
            if pair_count == 0 {
                return None;
            }
            let sx_count = index.count_occurrences(&pair.source);
            Some(TableEntry {
                pair,
                similarity,
                pair_count,
                sx_count,
            })
        })
        .collect();
    TaskGramTable { header, entries }
}

/// Runs the full mining pipeline.
pub fn mine(
    examples: &[TaskExample],
    index: &CorpusIndex,
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
    config: &MiningConfig,
) -> Result<TaskGramTable> {
    check_gamma(config.gamma)?;
    if config.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut candidates = generate_candidates(examples, config, index.store().tokenizer());
    log::info!("{} candidates from {} examples", candidates.len(), examples.len());
    embed_candidates(&mut candidates, provider, cache, config.batch)?;
    let filtered = filter_by_similarity(candidates, config.gamma)?;
    let header = TableHeader {
        format_version: TABLE_FORMAT_VERSION,
        task_id: config.task_id.clone(),
        n: config.n,
        gamma: config.gamma,
        provider_id: provider.provider_id().to_owned(),
        corpus_digest: index.store().manifest().content_digest.clone(),
        whole_output_as_target: config.whole_output_as_target,
    };
    Ok(build_table(&filtered, index, header))
}
