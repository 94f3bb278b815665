//! Conditional probabilities over a mined task-gram table.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{tokenize, TaskExample, TokenizerConfig};
use crate::error::{Error, Result};
use crate::miner::{target_ngrams, TaskGramTable};
use crate::ngram::{extract_ngrams, NGram, NGramPair};

#[derive(Clone, Debug)]
struct Target {
    target: NGram,
    pair_count: u64,
}

#[derive(Clone, Debug)]
struct SourceEntry {
    sx_count: u64,
    targets: Vec<Target>,
}

/// `P(s^y | s^x) = C((s^x, s^y)) / C(s^x)` for every pair in the table.
#[derive(Clone, Debug)]
pub struct TaskGramLM {
    table: TaskGramTable,
    lookup: BTreeMap<NGram, SourceEntry>,
}

impl TaskGramLM {
    pub fn new(table: TaskGramTable) -> Result<Self> {
        let mut lookup: BTreeMap<NGram, SourceEntry> = BTreeMap::new();
        for e in &table.entries {
            if e.pair_count == 0 || e.pair_count > e.sx_count {
                return Err(Error::Validation(format!(
                    "entry {} has pair_count {} and sx_count {}",
                    e.pair, e.pair_count, e.sx_count
                )));
            }
            let src = lookup.entry(e.pair.source.clone()).or_insert(SourceEntry {
                sx_count: e.sx_count,
                targets: Vec::new(),
            });
            if src.sx_count != e.sx_count {
                return Err(Error::Validation(format!(
                    "inconsistent source counts for {}",
                    e.pair.source
                )));
            }
            src.targets.push(Target {
                target: e.pair.target.clone(),
                pair_count: e.pair_count,
            });
        }
        for src in lookup.values_mut() {
            src.targets.sort_by(|a, b| a.target.cmp(&b.target));
        }
        Ok(TaskGramLM { table, lookup })
    }

    pub fn table(&self) -> &TaskGramTable {
        &self.table
    }

    pub fn n(&self) -> usize {
        self.table.header.n
    }

    fn find(&self, p: &NGramPair) -> Option<(u64, u64)> {
        let src = self.lookup.get(&p.source)?;
        let i = src.targets.binary_search_by(|t| t.target.cmp(&p.target)).ok()?;
        Some((src.targets[i].pair_count, src.sx_count))
    }

    pub fn pair_count(&self, p: &NGramPair) -> Result<u64> {
        self.find(p)
            .map(|(c, _)| c)
            .ok_or_else(|| Error::PairNotInTable(p.to_string()))
    }

    pub fn pair_probability(&self, p: &NGramPair) -> Result<f64> {
        let (pair, src) = self.find(p).ok_or_else(|| Error::PairNotInTable(p.to_string()))?;
        Ok(pair as f64 / src as f64)
    }

    pub fn log_pair_probability(&self, p: &NGramPair) -> Result<f64> {
        self.pair_probability(p).map(f64::ln)
    }

    /// Sum of probabilities over all targets of `source`.
    pub fn source_mass(&self, source: &NGram) -> f64 {
        self.lookup.get(source).map_or(0.0, |s| {
            s.targets.iter().map(|t| t.pair_count as f64).sum::<f64>() / s.sx_count as f64
        })
    }

    pub fn sources(&self) -> impl Iterator<Item = &NGram> {
        self.lookup.keys()
    }

    /// Table pairs whose source occurs in the tokenized input and whose
    /// target occurs in the tokenized output, in lexicographic order.
    pub fn find_pairs_in_tokens(&self, input: &[String], output: &[String]) -> Vec<NGramPair> {
        let ys: BTreeSet<NGram> =
            target_ngrams(output, self.n(), self.table.header.whole_output_as_target);
        let mut out = Vec::new();
        for sx in extract_ngrams(input, self.n()) {
            let Some(src) = self.lookup.get(&sx) else { continue };
            for t in &src.targets {
                if ys.contains(&t.target) {
                    out.push(NGramPair {
                        source: sx.clone(),
                        target: t.target.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn find_pairs_in_example(&self, example: &TaskExample, tokenizer: &TokenizerConfig) -> Vec<NGramPair> {
        self.find_pairs_in_tokens(&tokenize(&example.input, tokenizer), &tokenize(&example.output, tokenizer))
    }

    /// Unnormalized pair-count mass of an example: the sum of co-occurrence
    /// counts over its table pairs.
    pub fn example_pair_mass(&self, example: &TaskExample, tokenizer: &TokenizerConfig) -> u64 {
        self.find_pairs_in_example(example, tokenizer)
            .iter()
            .map(|p| self.find(p).map_or(0, |(c, _)| c))
            .sum()
    }
}
