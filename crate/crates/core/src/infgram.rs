//! Unbounded-order n-gram LM with longest-suffix backoff.
//!
//! A token is predicted from the longest suffix of its context that occurs
//! in the corpus: `P(t | ctx) = C(suffix ++ t) / C(suffix)`. With no usable
//! suffix the empty context is used and the denominator is the corpus token
//! count.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::CorpusIndex;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackoffResult {
    pub token: String,
    /// Length of the matched context suffix.
    pub matched_prefix_len: usize,
    pub numerator: u64,
    pub denominator: u64,
    pub probability: f64,
}

impl BackoffResult {
    pub fn n_i(&self) -> usize {
        self.matched_prefix_len + 1
    }

    pub fn is_zero(&self) -> bool {
        self.numerator == 0
    }
}

fn predict(index: &CorpusIndex, context: &[Option<u32>], token: &str) -> BackoffResult {
    let m = index.longest_suffix_ids(context);
    let (suffix_len, denominator) = if m.suffix_len == 0 {
        (0, index.total_tokens())
    } else {
        (m.suffix_len, m.count)
    };
    let numerator = match index.store().vocab().id(token) {
        Some(id) => {
            let mut seq: Vec<u32> = context[context.len() - suffix_len..]
                .iter()
                .map(|t| t.expect("matched suffix is in vocabulary"))
                .collect();
            seq.push(id);
            index.count_ids(&seq)
        }
        None => 0,
    };
    let probability = if numerator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    };
    BackoffResult {
        token: token.to_owned(),
        matched_prefix_len: suffix_len,
        numerator,
        denominator,
        probability,
    }
}

fn ids<S: AsRef<str>>(index: &CorpusIndex, words: &[S]) -> Vec<Option<u32>> {
    words.iter().map(|w| index.store().vocab().id(w.as_ref())).collect()
}

pub fn token_probability<S: AsRef<str>>(index: &CorpusIndex, context: &[S], token: &str) -> BackoffResult {
    predict(index, &ids(index, context), token)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpanProbability {
    /// Natural-log probability; `None` when every token had probability 0.
    pub log_prob: Option<f64>,
    /// Tokens with probability 0, which contribute a factor of 1.
    pub zero_tokens: usize,
    pub tokens: Vec<BackoffResult>,
}

impl SpanProbability {
    pub fn is_zero(&self) -> bool {
        self.log_prob.is_none()
    }
}

/// Probability of `y[span]` where each token is conditioned on everything
/// before it in `u ⊕ x ⊕ y`. Zero-probability tokens are skipped; the span is
/// zero only if all of its tokens are.
pub fn span_probability<S: AsRef<str>>(
    index: &CorpusIndex,
    instruction: &[S],
    input: &[S],
    output: &[S],
    span: Range<usize>,
) -> Result<SpanProbability> {
    if span.start >= span.end || span.end > output.len() {
        return Err(Error::InvalidArgument(format!(
            "span {:?} out of bounds for output of {} tokens",
            span,
            output.len()
        )));
    }
    let mut context = ids(index, instruction);
    context.extend(ids(index, input));
    let y = ids(index, output);
    context.extend_from_slice(&y[..span.start]);

    let mut tokens = Vec::with_capacity(span.len());
    let mut log_prob = 0.0;
    let mut zero_tokens = 0;
    for j in span {
        let r = predict(index, &context, output[j].as_ref());
        if r.is_zero() {
            zero_tokens += 1;
        } else {
            log_prob += r.probability.ln();
        }
        tokens.push(r);
        context.push(y[j]);
    }
    let log_prob = (zero_tokens < tokens.len()).then_some(log_prob);
    Ok(SpanProbability {
        log_prob,
        zero_tokens,
        tokens,
    })
}
