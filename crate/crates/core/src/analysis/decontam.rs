//! Long n-gram overlap check between test examples and the corpus.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::corpus::{tokenize, TaskExample, TokenizerConfig};
use crate::index::CorpusIndex;
use crate::ngram::NGram;

pub const DEFAULT_DECONTAM_N: [usize; 2] = [8, 14];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OffendingNGram {
    pub n: usize,
    pub side: Side,
    pub ngram: NGram,
    pub doc_ids: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleContamination {
    pub example_id: u32,
    pub contaminated: bool,
    pub offending: Vec<OffendingNGram>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContaminationReport {
    pub n_values: Vec<usize>,
    pub examples: Vec<ExampleContamination>,
}

impl ContaminationReport {
    pub fn flagged(&self) -> usize {
        self.examples.iter().filter(|e| e.contaminated).count()
    }

    pub fn to_jsonl(&self) -> serde_json::Result<String> {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn scan(index: &CorpusIndex, tokens: &[String], n: usize, side: Side, out: &mut Vec<OffendingNGram>) {
    let mut seen = std::collections::BTreeSet::new();
    for w in tokens.windows(n) {
        if !seen.insert(w) {
            continue;
        }
        let Some(ids) = index.store().encode(w) else { continue };
        let docs = index.documents_containing_ids(&ids);
        if !docs.is_empty() {
            out.push(OffendingNGram {
                n,
                side,
                ngram: NGram::new(w.to_vec()).expect("window is non-empty"),
                doc_ids: docs,
            });
        }
    }
}

/// Flags every example with a length-`n` window (for any `n` in `n_values`)
/// of its input or output that occurs in the corpus.
pub fn decontaminate(
    index: &CorpusIndex,
    examples: &[TaskExample],
    n_values: &[usize],
    tokenizer: &TokenizerConfig,
) -> ContaminationReport {
    let examples = examples
        .par_iter()
        .map(|ex| {
            let x = tokenize(&ex.input, tokenizer);
            let y = tokenize(&ex.output, tokenizer);
            let mut offending = Vec::new();
            for &n in n_values.iter().filter(|&&n| n > 0) {
                scan(index, &x, n, Side::Input, &mut offending);
                scan(index, &y, n, Side::Output, &mut offending);
            }
            ExampleContamination {
                example_id: ex.example_id,
                contaminated: !offending.is_empty(),
                offending,
            }
        })
        .collect();
    ContaminationReport {
        n_values: n_values.to_vec(),
        examples,
    }
}
