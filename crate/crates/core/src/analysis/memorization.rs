//! Distributional memorization: rank correlation between an n-gram LM's
//! log-probabilities and an LLM's log-probabilities over the task-gram
//! pairs found in a test set.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::analysis::stats::{spearman_rho_with, CorrelationResult, PValueMethod};
use crate::bridge::{target_logprob, PromptTemplate, TokenLogProbRecord};
use crate::corpus::{tokenize, TaskExample, TokenizerConfig};
use crate::error::{Error, Result};
use crate::index::CorpusIndex;
use crate::infgram::span_probability;
use crate::ngram::{find_subsequence, NGramPair};
use crate::taskgram_lm::TaskGramLM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmKind {
    Taskgram,
    Infgram,
}

impl std::str::FromStr for LmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taskgram" => Ok(LmKind::Taskgram),
            "infgram" => Ok(LmKind::Infgram),
            other => Err(Error::InvalidArgument(format!("unknown lm kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedObservation {
    pub pair: NGramPair,
    pub example_id: u32,
    pub log_p_ngram: f64,
    pub log_p_llm: f64,
}

/// Observations plus what was left out while assembling them.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Assembly {
    pub observations: Vec<PairedObservation>,
    /// Pairs found in the test set (|Φ| summed over examples).
    pub phi_size: usize,
    /// Pairs whose n-gram probability was the all-zero sentinel.
    pub excluded_zero_prob: usize,
    /// Pairs skipped because their example had no log-prob record.
    pub missing_records: usize,
}

pub struct MemorizationInputs<'a> {
    pub lm: &'a TaskGramLM,
    /// Required for [`LmKind::Infgram`].
    pub index: Option<&'a CorpusIndex>,
    pub examples: &'a [TaskExample],
    pub records: &'a HashMap<u32, TokenLogProbRecord>,
    pub template: &'a PromptTemplate,
    pub tokenizer: &'a TokenizerConfig,
}

/// Builds one observation per (example, pair in Φ).
pub fn assemble_observations(kind: LmKind, inputs: &MemorizationInputs<'_>) -> Result<Assembly> {
    let index = match kind {
        LmKind::Infgram => Some(inputs.index.ok_or_else(|| {
            Error::InvalidArgument("the infgram LM needs a corpus index".into())
        })?),
        LmKind::Taskgram => None,
    };
    let instruction = tokenize(&inputs.template.instruction, inputs.tokenizer);
    let mut out = Assembly::default();
    for ex in inputs.examples {
        let x = tokenize(&ex.input, inputs.tokenizer);
        let y = tokenize(&ex.output, inputs.tokenizer);
        let phi = inputs.lm.find_pairs_in_tokens(&x, &y);
        out.phi_size += phi.len();
        if phi.is_empty() {
            continue;
        }
        let Some(record) = inputs.records.get(&ex.example_id) else {
            out.missing_records += phi.len();
            continue;
        };
        let rendered = inputs.template.render(&ex.input, &ex.output)?;
        record.validate_against(&rendered)?;
        for pair in phi {
            let log_p_ngram = match index {
                None => inputs.lm.log_pair_probability(&pair)?,
                Some(idx) => {
                    let start = find_subsequence(&y, pair.target.tokens())
                        .expect("Φ targets occur in the output");
                    let span = span_probability(idx, &instruction, &x, &y, start..start + pair.target.n())?;
                    match span.log_prob {
                        Some(lp) => lp,
                        None => {
                            out.excluded_zero_prob += 1;
                            continue;
                        }
                    }
                }
            };
            let Some(log_p_llm) = target_logprob(record, &rendered, &ex.output, &pair.target, inputs.tokenizer)? else {
                continue;
            };
            out.observations.push(PairedObservation {
                pair,
                example_id: ex.example_id,
                log_p_ngram,
                log_p_llm,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemorizationResult {
    pub lm_kind: LmKind,
    pub correlation: CorrelationResult,
    pub phi_size: usize,
    pub excluded_zero_prob: usize,
    pub missing_records: usize,
}

impl MemorizationResult {
    /// The flat report shape: `{"rho", "p", "n", "excluded_zero_prob", ...}`.
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({
            "lm_kind": self.lm_kind,
            "rho": self.correlation.value,
            "p": self.correlation.p_value,
            "n": self.correlation.sample_size,
            "excluded_zero_prob": self.excluded_zero_prob,
            "missing_records": self.missing_records,
            "phi_size": self.phi_size,
            "ties": self.correlation.ties,
        })
    }
}

/// Spearman correlation over assembled observations.
pub fn distributional_memorization(kind: LmKind, assembly: &Assembly, method: PValueMethod) -> Result<MemorizationResult> {
    if assembly.phi_size == 0 {
        return Err(Error::Statistics("no table pairs found in test set".into()));
    }
    let xs: Vec<f64> = assembly.observations.iter().map(|o| o.log_p_ngram).collect();
    let ys: Vec<f64> = assembly.observations.iter().map(|o| o.log_p_llm).collect();
    Ok(MemorizationResult {
        lm_kind: kind,
        correlation: spearman_rho_with(&xs, &ys, method)?,
        phi_size: assembly.phi_size,
        excluded_zero_prob: assembly.excluded_zero_prob,
        missing_records: assembly.missing_records,
    })
}

/// Assembles observations and correlates them in one step.
pub fn run_memorization(kind: LmKind, inputs: &MemorizationInputs<'_>) -> Result<MemorizationResult> {
    let assembly = assemble_observations(kind, inputs)?;
    distributional_memorization(kind, &assembly, PValueMethod::TApproximation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::NGram;

    fn obs(lp_ngram: f64, lp_llm: f64, i: usize) -> PairedObservation {
        PairedObservation {
            pair: NGramPair::new(
                NGram::new(vec![format!("x{i}")]).unwrap(),
                NGram::new(vec![format!("y{i}")]).unwrap(),
            )
            .unwrap(),
            example_id: i as u32,
            log_p_ngram: lp_ngram,
            log_p_llm: lp_llm,
        }
    }

    #[test]
    fn empty_phi_is_an_error() {
        let a = Assembly::default();
        match distributional_memorization(LmKind::Taskgram, &a, PValueMethod::TApproximation) {
            Err(Error::Statistics(m)) => assert_eq!(m, "no table pairs found in test set"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn permutation_invariant() {
        let observations: Vec<PairedObservation> = (0..40)
            .map(|i| obs(-(i as f64 * 0.37 % 5.0), -((i * 7 % 11) as f64), i))
            .collect();
        let mut reversed = observations.clone();
        reversed.reverse();
        let a = Assembly { phi_size: 40, observations, ..Default::default() };
        let b = Assembly { phi_size: 40, observations: reversed, ..Default::default() };
        let ra = distributional_memorization(LmKind::Taskgram, &a, PValueMethod::TApproximation).unwrap();
        let rb = distributional_memorization(LmKind::Taskgram, &b, PValueMethod::TApproximation).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn report_shape() {
        let a = Assembly {
            phi_size: 5,
            excluded_zero_prob: 2,
            observations: (0..3).map(|i| obs(i as f64, i as f64, i)).collect(),
            ..Default::default()
        };
        let r = distributional_memorization(LmKind::Infgram, &a, PValueMethod::TApproximation).unwrap();
        let j = r.report_json();
        assert_eq!(j["rho"], 1.0);
        assert_eq!(j["p"], 0.0);
        assert_eq!(j["n"], 3);
        assert_eq!(j["excluded_zero_prob"], 2);
        assert_eq!(j["lm_kind"], "infgram");
    }
}
