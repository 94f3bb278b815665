//! TracIn-style influence from externally produced gradient dumps.
//!
//! A dump holds, for each checkpoint, one gradient per (document, target
//! span) and per (test example, target span). Influence of a document on an
//! example is the sum over checkpoints and the example's table pairs of the
//! dot product of the two gradients.
//!
//! On-disk layout:
//! ```text
//! <dir>/index.json                       {"checkpoints": [...], "dim": d}
//! <dir>/<checkpoint>/<train|test>/<id>-<span key>.vec   little-endian f32 x d
//! ```
//! where the span key is the first 16 hex digits of the sha256 of the span
//! text (tokens joined by single spaces).

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TaskExample, TokenizerConfig};
use crate::error::{Error, Result};
use crate::index::CorpusIndex;
use crate::ngram::{NGram, NGramPair};
use crate::taskgram_lm::TaskGramLM;
use crate::util::{read_all, sha256_hex, write_all};

pub const DEFAULT_R: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradKind {
    /// Loss of a corpus document on a span.
    Train,
    /// Loss of a test example on a span.
    Test,
}

impl GradKind {
    fn dir(self) -> &'static str {
        match self {
            GradKind::Train => "train",
            GradKind::Test => "test",
        }
    }
}

pub trait GradientSource {
    fn checkpoints(&self) -> &[String];
    fn dim(&self) -> usize;
    /// `None` when no vector was dumped for this key.
    fn gradient(&self, checkpoint: usize, kind: GradKind, id: u32, span: &NGram) -> Result<Option<Vec<f32>>>;
}

fn require(src: &dyn GradientSource, checkpoint: usize, kind: GradKind, id: u32, span: &NGram) -> Result<Vec<f32>> {
    let v = src.gradient(checkpoint, kind, id, span)?.ok_or_else(|| Error::MissingGradient {
        checkpoint,
        id: format!("{}:{id}:{span}", kind.dir()),
    })?;
    if v.len() != src.dim() {
        return Err(Error::Dimension {
            expected: src.dim(),
            actual: v.len(),
        });
    }
    Ok(v)
}

#[derive(Clone, Debug, Default)]
pub struct InMemoryGradients {
    checkpoints: Vec<String>,
    dim: usize,
    vectors: HashMap<(usize, GradKind, u32, NGram), Vec<f32>>,
}

impl InMemoryGradients {
    pub fn new(checkpoints: Vec<String>, dim: usize) -> Self {
        InMemoryGradients {
            checkpoints,
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, checkpoint: usize, kind: GradKind, id: u32, span: NGram, v: Vec<f32>) {
        self.vectors.insert((checkpoint, kind, id, span), v);
    }
}

impl GradientSource for InMemoryGradients {
    fn checkpoints(&self) -> &[String] {
        &self.checkpoints
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, checkpoint: usize, kind: GradKind, id: u32, span: &NGram) -> Result<Option<Vec<f32>>> {
        Ok(self.vectors.get(&(checkpoint, kind, id, span.clone())).cloned())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DumpIndex {
    checkpoints: Vec<String>,
    dim: usize,
}

/// Directory-backed gradient dumps.
#[derive(Clone, Debug)]
pub struct GradientDumps {
    dir: PathBuf,
    index: DumpIndex,
}

pub fn span_key(span: &NGram) -> String {
    sha256_hex(span.to_string().as_bytes())[..16].to_owned()
}

impl GradientDumps {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let index: DumpIndex = serde_json::from_slice(&read_all(&path)?)?;
        if index.dim == 0 || index.checkpoints.is_empty() {
            return Err(Error::Format(format!("{}: empty checkpoints or zero dim", path.display())));
        }
        Ok(GradientDumps {
            dir: dir.to_path_buf(),
            index,
        })
    }

    /// Starts a new dump directory, writing its index.
    pub fn create(dir: &Path, checkpoints: Vec<String>, dim: usize) -> Result<Self> {
        let index = DumpIndex { checkpoints, dim };
        write_all(&dir.join("index.json"), serde_json::to_string_pretty(&index)?.as_bytes())?;
        Ok(GradientDumps {
            dir: dir.to_path_buf(),
            index,
        })
    }

    fn path(&self, checkpoint: usize, kind: GradKind, id: u32, span: &NGram) -> PathBuf {
        self.dir
            .join(&self.index.checkpoints[checkpoint])
            .join(kind.dir())
            .join(format!("{id}-{}.vec", span_key(span)))
    }

    pub fn write(&self, checkpoint: usize, kind: GradKind, id: u32, span: &NGram, v: &[f32]) -> Result<()> {
        if checkpoint >= self.index.checkpoints.len() {
            return Err(Error::InvalidArgument(format!("no checkpoint {checkpoint}")));
        }
        if v.len() != self.index.dim {
            return Err(Error::Dimension {
                expected: self.index.dim,
                actual: v.len(),
            });
        }
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        write_all(&self.path(checkpoint, kind, id, span), &bytes)
    }
}

impl GradientSource for GradientDumps {
    fn checkpoints(&self) -> &[String] {
        &self.index.checkpoints
    }

    fn dim(&self) -> usize {
        self.index.dim
    }

    fn gradient(&self, checkpoint: usize, kind: GradKind, id: u32, span: &NGram) -> Result<Option<Vec<f32>>> {
        if checkpoint >= self.index.checkpoints.len() {
            return Ok(None);
        }
        let path = self.path(checkpoint, kind, id, span);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = read_all(&path)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format(format!("{}: length not a multiple of 4", path.display())));
        }
        Ok(Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfluenceRecord {
    pub doc_id: u32,
    pub example_id: u32,
    pub per_checkpoint: Vec<f64>,
    pub accumulated: f64,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Influence of one document on one example, summed over `pairs` (only the
/// target side carries a gradient) and all checkpoints.
pub fn influence_pairwise(
    grads: &dyn GradientSource,
    doc_id: u32,
    example_id: u32,
    pairs: &[NGramPair],
) -> Result<InfluenceRecord> {
    let mut per_checkpoint = Vec::with_capacity(grads.checkpoints().len());
    for ck in 0..grads.checkpoints().len() {
        let mut total = 0.0;
        for p in pairs {
            let g_train = require(grads, ck, GradKind::Train, doc_id, &p.target)?;
            let g_test = require(grads, ck, GradKind::Test, example_id, &p.target)?;
            total += dot(&g_train, &g_test);
        }
        per_checkpoint.push(total);
    }
    Ok(InfluenceRecord {
        doc_id,
        example_id,
        accumulated: per_checkpoint.iter().sum(),
        per_checkpoint,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalScheme {
    /// Documents where a table pair of the example co-occurs.
    Pair,
    /// Documents containing a target n-gram of the example.
    TargetOnly,
}

impl std::str::FromStr for RetrievalScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair" => Ok(RetrievalScheme::Pair),
            "target_only" | "target-only" => Ok(RetrievalScheme::TargetOnly),
            other => Err(Error::InvalidArgument(format!("unknown retrieval scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Shortfall {
    pub example_id: u32,
    pub requested: usize,
    pub available: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfluenceAverage {
    pub scheme: RetrievalScheme,
    pub r: usize,
    pub seed: u64,
    /// Mean over contributing examples of the mean over their sampled documents.
    pub value: Option<f64>,
    pub examples_used: usize,
    /// Examples with no table pairs or no retrievable documents.
    pub skipped: Vec<u32>,
    pub shortfalls: Vec<Shortfall>,
    pub records: Vec<InfluenceRecord>,
}

impl InfluenceAverage {
    pub fn to_csv(&self) -> String {
        let k = self.records.first().map_or(0, |r| r.per_checkpoint.len());
        let mut out = String::from("doc_id,example_id");
        for i in 0..k {
            let _ = write!(out, ",ckpt_{i}");
        }
        out.push_str(",accumulated\n");
        for r in &self.records {
            let _ = write!(out, "{},{}", r.doc_id, r.example_id);
            for v in &r.per_checkpoint {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", r.accumulated);
        }
        out
    }
}

pub struct InfluenceInputs<'a> {
    pub grads: &'a dyn GradientSource,
    pub index: &'a CorpusIndex,
    pub lm: &'a TaskGramLM,
    pub examples: &'a [TaskExample],
    pub tokenizer: &'a TokenizerConfig,
}

/// Samples up to `r` documents per example and averages their influence.
///
/// For each sampled document only the example's pairs whose target occurs
/// in that document contribute, since the document loss on a span is
/// defined only where the span appears.
pub fn influence_average(
    inputs: &InfluenceInputs<'_>,
    scheme: RetrievalScheme,
    r: usize,
    seed: u64,
) -> Result<InfluenceAverage> {
    if r == 0 {
        return Err(Error::InvalidArgument("R must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = InfluenceAverage {
        scheme,
        r,
        seed,
        value: None,
        examples_used: 0,
        skipped: Vec::new(),
        shortfalls: Vec::new(),
        records: Vec::new(),
    };
    let mut sum = 0.0;
    for ex in inputs.examples {
        let phi = inputs.lm.find_pairs_in_example(ex, inputs.tokenizer);
        let mut targets: HashMap<&NGram, Vec<u32>> = HashMap::new();
        for p in &phi {
            targets
                .entry(&p.target)
                .or_insert_with(|| inputs.index.documents_for(&p.target));
        }
        let mut pool = BTreeSet::new();
        for p in &phi {
            match scheme {
                RetrievalScheme::Pair => {
                    let src = inputs.index.documents_for(&p.source);
                    pool.extend(crate::index::intersect(&src, &targets[&p.target]));
                }
                RetrievalScheme::TargetOnly => pool.extend(targets[&p.target].iter().copied()),
            }
        }
        if pool.is_empty() {
            out.skipped.push(ex.example_id);
            continue;
        }
        let pool: Vec<u32> = pool.into_iter().collect();
        let chosen: Vec<u32> = if pool.len() <= r {
            if pool.len() < r {
                out.shortfalls.push(Shortfall {
                    example_id: ex.example_id,
                    requested: r,
                    available: pool.len(),
                });
            }
            pool
        } else {
            let mut picked: Vec<u32> = sample(&mut rng, pool.len(), r).into_iter().map(|i| pool[i]).collect();
            picked.sort_unstable();
            picked
        };
        let mut ex_sum = 0.0;
        for &d in &chosen {
            let pairs: Vec<NGramPair> = phi
                .iter()
                .filter(|p| targets[&p.target].binary_search(&d).is_ok())
                .cloned()
                .collect();
            let rec = influence_pairwise(inputs.grads, d, ex.example_id, &pairs)?;
            ex_sum += rec.accumulated;
            out.records.push(rec);
        }
        sum += ex_sum / chosen.len() as f64;
        out.examples_used += 1;
    }
    if out.examples_used > 0 {
        out.value = Some(sum / out.examples_used as f64);
    }
    Ok(out)
}
