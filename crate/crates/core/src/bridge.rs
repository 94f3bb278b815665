//! Per-token LLM log-probabilities and their alignment to word-level spans.
//!
//! Records come from an echo-with-logprobs completion endpoint (or a
//! precomputed JSONL file): the model's tokens for the rendered prompt, one
//! natural-log probability per token and each token's character offset.

use std::collections::HashMap;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{tokenize_with_offsets, TaskExample, TokenizerConfig};
use crate::error::{Error, Result};
use crate::http::EndpointConfig;
use crate::ngram::{find_subsequence, NGram};
use crate::util::{for_each_jsonl_line, open_append, sha256_hex};

pub const DEFAULT_TEMPLATE: &str = "Q: {x}\nA: {y}";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Instruction prepended on its own line when non-empty.
    pub instruction: String,
    /// Layout with exactly one `{x}` followed by exactly one `{y}`.
    pub template: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            instruction: String::new(),
            template: DEFAULT_TEMPLATE.into(),
        }
    }
}

/// A rendered prompt with the character ranges of its input and output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub x_range: Range<usize>,
    pub y_range: Range<usize>,
}

impl PromptTemplate {
    pub fn new(instruction: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate {
            instruction: instruction.into(),
            template: template.into(),
        };
        t.slots()?;
        Ok(t)
    }

    fn slots(&self) -> Result<(usize, usize)> {
        let bad = || Error::InvalidArgument(format!("template {:?} needs one {{x}} before one {{y}}", self.template));
        if self.template.matches("{x}").count() != 1 || self.template.matches("{y}").count() != 1 {
            return Err(bad());
        }
        let x = self.template.find("{x}").ok_or_else(bad)?;
        let y = self.template.find("{y}").ok_or_else(bad)?;
        if x > y {
            return Err(bad());
        }
        Ok((x, y))
    }

    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("template serializes"))
    }

    pub fn render(&self, x: &str, y: &str) -> Result<RenderedPrompt> {
        let (xp, yp) = self.slots()?;
        let mut text = String::new();
        if !self.instruction.is_empty() {
            text.push_str(&self.instruction);
            text.push('\n');
        }
        let chars = |s: &str| s.chars().count();
        text.push_str(&self.template[..xp]);
        let x_start = chars(&text);
        text.push_str(x);
        let x_range = x_start..x_start + chars(x);
        text.push_str(&self.template[xp + 3..yp]);
        let y_start = chars(&text);
        text.push_str(y);
        let y_range = y_start..y_start + chars(y);
        text.push_str(&self.template[yp + 3..]);
        Ok(RenderedPrompt { text, x_range, y_range })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbRecord {
    pub example_id: u32,
    pub model_id: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    /// Character offset of each token in the rendered prompt.
    pub offsets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_digest: Option<String>,
}

impl TokenLogProbRecord {
    /// Structural checks: parallel arrays, log-probs in (-inf, 0], offsets
    /// starting at 0, strictly increasing and tiling the token texts.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(format!("example {}: {m}", self.example_id)));
        let n = self.tokens.len();
        if n == 0 {
            return fail("record has no tokens".into());
        }
        if self.logprobs.len() != n || self.offsets.len() != n {
            return fail(format!(
                "{} tokens, {} logprobs, {} offsets",
                n,
                self.logprobs.len(),
                self.offsets.len()
            ));
        }
        if let Some((i, lp)) = self.logprobs.iter().enumerate().find(|(_, lp)| !(lp.is_finite() && **lp <= 0.0)) {
            return fail(format!("log-prob {lp} at token {i} is not a finite value <= 0"));
        }
        if self.offsets[0] != 0 {
            return fail("offsets must start at 0".into());
        }
        for i in 0..n {
            let len = self.tokens[i].chars().count();
            let end = self.offsets[i] + len;
            if len == 0 {
                return fail(format!("token {i} is empty"));
            }
            if i + 1 < n && self.offsets[i + 1] != end {
                return fail(format!("offsets do not tile the text at token {i}"));
            }
        }
        Ok(())
    }

    /// Structural checks plus agreement with the rendered prompt text.
    pub fn validate_against(&self, rendered: &RenderedPrompt) -> Result<()> {
        self.validate()?;
        if self.tokens.concat() != rendered.text {
            return Err(Error::Validation(format!(
                "example {}: tokens do not reproduce the rendered prompt",
                self.example_id
            )));
        }
        Ok(())
    }

    fn token_end(&self, i: usize) -> usize {
        self.offsets[i] + self.tokens[i].chars().count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpanAlignment {
    pub char_range: Range<usize>,
    pub token_range: Range<usize>,
    /// Token boundaries coincide with the span boundaries.
    pub exact: bool,
}

/// Smallest token range whose characters cover `word_span`.
pub fn align_span(record: &TokenLogProbRecord, rendered: &RenderedPrompt, word_span: Range<usize>) -> Result<SpanAlignment> {
    if word_span.start >= word_span.end
        || word_span.start < rendered.y_range.start
        || word_span.end > rendered.y_range.end
    {
        return Err(Error::InvalidArgument(format!(
            "span {:?} is not inside the output region {:?}",
            word_span, rendered.y_range
        )));
    }
    let n = record.tokens.len();
    let first = (0..n)
        .find(|&i| record.token_end(i) > word_span.start)
        .ok_or_else(|| Error::Validation("span lies beyond the last token".into()))?;
    let last = (0..n)
        .rev()
        .find(|&i| record.offsets[i] < word_span.end)
        .ok_or_else(|| Error::Validation("span lies before the first token".into()))?;
    let exact = record.offsets[first] == word_span.start && record.token_end(last) == word_span.end;
    Ok(SpanAlignment {
        char_range: word_span,
        token_range: first..last + 1,
        exact,
    })
}

pub fn span_logprob(record: &TokenLogProbRecord, alignment: &SpanAlignment) -> f64 {
    record.logprobs[alignment.token_range.clone()].iter().sum()
}

/// Character range (in the rendered prompt) of the first occurrence of
/// `target` among the output's word tokens.
pub fn target_char_span(
    rendered: &RenderedPrompt,
    output: &str,
    target: &NGram,
    tokenizer: &TokenizerConfig,
) -> Option<Range<usize>> {
    let toks = tokenize_with_offsets(output, tokenizer);
    let words: Vec<&str> = toks.iter().map(|(w, _)| w.as_str()).collect();
    let needle: Vec<&str> = target.tokens().iter().map(String::as_str).collect();
    let i = find_subsequence(&words, &needle)?;
    let start = toks[i].1.start + rendered.y_range.start;
    let end = toks[i + needle.len() - 1].1.end + rendered.y_range.start;
    Some(start..end)
}

/// `log P_LLM(target | prompt before it)` for one example, or `None` when the
/// target does not occur among the output tokens.
pub fn target_logprob(
    record: &TokenLogProbRecord,
    rendered: &RenderedPrompt,
    output: &str,
    target: &NGram,
    tokenizer: &TokenizerConfig,
) -> Result<Option<f64>> {
    let Some(span) = target_char_span(rendered, output, target, tokenizer) else {
        return Ok(None);
    };
    let a = align_span(record, rendered, span)?;
    Ok(Some(span_logprob(record, &a)))
}

pub fn load_records(path: &Path) -> Result<Vec<TokenLogProbRecord>> {
    let mut out = Vec::new();
    for_each_jsonl_line(path, |no, line| {
        let r: TokenLogProbRecord = serde_json::from_str(line).map_err(|e| Error::Line {
            line: no,
            message: format!("malformed log-prob record: {e}"),
        })?;
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

type CacheKey = (String, String, u32);

/// Append-only JSONL cache of records keyed by model, template and example.
#[derive(Debug, Default)]
pub struct LogprobCache {
    path: Option<PathBuf>,
    records: HashMap<CacheKey, TokenLogProbRecord>,
}

impl LogprobCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut cache = LogprobCache {
            path: Some(path.to_owned()),
            records: HashMap::new(),
        };
        if path.exists() {
            for r in load_records(path)? {
                if let Some(d) = r.template_digest.clone() {
                    cache.records.insert((r.model_id.clone(), d, r.example_id), r);
                }
            }
        }
        Ok(cache)
    }

    pub fn get(&self, model_id: &str, template_digest: &str, example_id: u32) -> Option<&TokenLogProbRecord> {
        self.records
            .get(&(model_id.to_owned(), template_digest.to_owned(), example_id))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn insert(&mut self, record: TokenLogProbRecord) -> Result<()> {
        let digest = record
            .template_digest
            .clone()
            .ok_or_else(|| Error::InvalidArgument("cached records need a template digest".into()))?;
        if let Some(path) = &self.path {
            let mut f = open_append(path)?;
            writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(path, e))?;
        }
        self.records
            .insert((record.model_id.clone(), digest, record.example_id), record);
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LogprobClient {
    pub model_id: String,
    pub endpoint: EndpointConfig,
    pub max_in_flight: usize,
}

#[derive(Deserialize)]
struct EchoResponse {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
    offsets: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FetchFailure {
    pub example_id: u32,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct FetchReport {
    pub records: Vec<TokenLogProbRecord>,
    pub failures: Vec<FetchFailure>,
    pub cache_hits: usize,
}

impl LogprobClient {
    fn fetch_one(&self, example: &TaskExample, rendered: &RenderedPrompt, digest: &str) -> Result<TokenLogProbRecord> {
        let reply = self.endpoint.post_json(&json!({
            "model": self.model_id,
            "prompt": rendered.text,
            "echo": true,
            "logprobs": true,
        }))?;
        let resp: EchoResponse = serde_json::from_value(reply)
            .map_err(|e| Error::Format(format!("bad log-prob response: {e}")))?;
        let offsets = resp.offsets.ok_or_else(|| {
            Error::Validation(format!("example {}: response has no offsets", example.example_id))
        })?;
        let record = TokenLogProbRecord {
            example_id: example.example_id,
            model_id: self.model_id.clone(),
            tokens: resp.tokens,
            logprobs: resp.logprobs,
            offsets,
            template_digest: Some(digest.to_owned()),
        };
        record.validate_against(rendered)?;
        Ok(record)
    }
}

/// Fetches a record per example, serving cached ones without a request.
///
/// Transport failures become per-example failure entries; malformed
/// responses abort the fetch.
pub fn fetch_logprobs(
    client: &LogprobClient,
    examples: &[TaskExample],
    template: &PromptTemplate,
    cache: &mut LogprobCache,
) -> Result<FetchReport> {
    let digest = template.digest();
    let mut report = FetchReport::default();
    let mut pending = Vec::new();
    for ex in examples {
        match cache.get(&client.model_id, &digest, ex.example_id) {
            Some(r) => {
                report.cache_hits += 1;
                report.records.push(r.clone());
            }
            None => pending.push((ex, template.render(&ex.input, &ex.output)?)),
        }
    }
    for window in pending.chunks(client.max_in_flight.max(1)) {
        let results: Vec<Result<TokenLogProbRecord>> = std::thread::scope(|s| {
            let handles: Vec<_> = window
                .iter()
                .map(|(ex, rendered)| s.spawn(|| client.fetch_one(ex, rendered, &digest)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch worker panicked"))
                .collect()
        });
        for ((ex, _), res) in window.iter().zip(results) {
            match res {
                Ok(r) => {
                    cache.insert(r.clone())?;
                    report.records.push(r);
                }
                Err(e @ Error::Transport { .. }) => report.failures.push(FetchFailure {
                    example_id: ex.example_id,
                    message: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    report.records.sort_by_key(|r| r.example_id);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing;

    fn record(tokens: &[&str], logprobs: &[f64]) -> TokenLogProbRecord {
        let mut offsets = Vec::new();
        let mut pos = 0;
        for t in tokens {
            offsets.push(pos);
            pos += t.chars().count();
        }
        TokenLogProbRecord {
            example_id: 0,
            model_id: "m".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            logprobs: logprobs.to_vec(),
            offsets,
            template_digest: None,
        }
    }

    fn ex(id: u32, x: &str, y: &str) -> TaskExample {
        TaskExample {
            example_id: id,
            input: x.into(),
            output: y.into(),
            score: None,
        }
    }

    #[test]
    fn render_default_template() {
        let t = PromptTemplate::default();
        let r = t.render("Where?", "Paris").unwrap();
        assert_eq!(r.text, "Q: Where?\nA: Paris");
        assert_eq!(r.x_range, 3..9);
        assert_eq!(r.y_range, 13..18);
        let with_u = PromptTemplate::new("Answer briefly.", DEFAULT_TEMPLATE).unwrap();
        assert_eq!(with_u.render("a", "b").unwrap().text, "Answer briefly.\nQ: a\nA: b");
        assert_ne!(t.digest(), with_u.digest());
        assert!(PromptTemplate::new("", "{y} {x}").is_err());
        assert!(PromptTemplate::new("", "{x}").is_err());
    }

    #[test]
    fn validation_rules() {
        let ok = record(&["Q", ":", " hi"], &[-1.0, -0.5, -0.1]);
        assert!(ok.validate().is_ok());
        let positive = record(&["Q", ":"], &[-1.0, 0.2]);
        assert!(matches!(positive.validate(), Err(Error::Validation(_))));
        let mut gap = ok.clone();
        gap.offsets = vec![0, 1, 3];
        assert!(gap.validate().is_err());
        let mut short = ok.clone();
        short.logprobs.pop();
        assert!(short.validate().is_err());
    }

    fn rendered_and_record(tokens: &[&str], lps: &[f64]) -> (RenderedPrompt, TokenLogProbRecord) {
        let r = PromptTemplate::default().render("capital of france", "it is paris").unwrap();
        let rec = record(tokens, lps);
        rec.validate_against(&r).unwrap();
        (r, rec)
    }

    #[test]
    fn alignment_cases() {
        let lps = [-0.1; 10];
        // word-aligned tokens
        let (r, rec) = rendered_and_record(
            &["Q: ", "capital", " of", " france", "\nA: ", "it", " is", " ", "paris"],
            &lps[..9],
        );
        let span = target_char_span(&r, "it is paris", &NGram::new(vec!["paris".into()]).unwrap(), &TokenizerConfig::default()).unwrap();
        let a = align_span(&rec, &r, span).unwrap();
        assert_eq!((a.token_range.clone(), a.exact), (8..9, true));

        // subword split
        let (r, rec) = rendered_and_record(
            &["Q: capital of france\nA: it is ", "par", "is"],
            &[-3.0, -0.5, -1.0],
        );
        let a = align_span(&rec, &r, r.y_range.start + 6..r.y_range.end).unwrap();
        assert_eq!((a.token_range.clone(), a.exact), (1..3, true));
        assert_eq!(span_logprob(&rec, &a), -1.5);

        // leading space merged into the token
        let (r, rec) = rendered_and_record(
            &["Q: capital of france\nA: it is", " par", "is"],
            &[-3.0, -0.5, -1.0],
        );
        let a = align_span(&rec, &r, r.y_range.start + 6..r.y_range.end).unwrap();
        assert_eq!((a.token_range.clone(), a.exact), (1..3, false));

        assert!(align_span(&rec, &r, 0..2).is_err());
        assert!(align_span(&rec, &r, r.y_range.start..r.y_range.start).is_err());
    }

    #[test]
    fn adjacent_spans_add() {
        let (r, rec) = rendered_and_record(
            &["Q: capital of france\nA: ", "it", " is", " paris"],
            &[-2.0, -0.25, -0.5, -1.0],
        );
        let y0 = r.y_range.start;
        let whole = span_logprob(&rec, &align_span(&rec, &r, y0..y0 + 5).unwrap());
        let left = span_logprob(&rec, &align_span(&rec, &r, y0..y0 + 2).unwrap());
        let right = span_logprob(&rec, &align_span(&rec, &r, y0 + 3..y0 + 5).unwrap());
        assert_eq!(whole, left + right);
        let single = span_logprob(&rec, &align_span(&rec, &r, y0 + 6..y0 + 11).unwrap());
        assert_eq!(single, -1.0);
    }

    #[test]
    fn fetch_uses_cache_and_records_transport_failures() {
        let template = PromptTemplate::default();
        let server = testing::serve(1, |_, req| {
            let prompt = req["prompt"].as_str().unwrap().to_owned();
            assert_eq!(req["echo"], true);
            let n = prompt.chars().count();
            (200, json!({"tokens": [prompt], "logprobs": [-0.5], "offsets": [0], "len": n}))
        });
        let mut endpoint = EndpointConfig::new(&server.url);
        endpoint.backoff_ms = 1;
        endpoint.max_retries = 0;
        let client = LogprobClient {
            model_id: "m".into(),
            endpoint,
            max_in_flight: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut cache = LogprobCache::open(&path).unwrap();
        let examples = [ex(0, "a", "b")];
        let first = fetch_logprobs(&client, &examples, &template, &mut cache).unwrap();
        assert_eq!(first.records.len(), 1);
        assert_eq!(first.cache_hits, 0);

        // the server is gone: a cached example must not need it
        let mut reopened = LogprobCache::open(&path).unwrap();
        let second = fetch_logprobs(&client, &examples, &template, &mut reopened).unwrap();
        assert_eq!(second.cache_hits, 1);
        assert_eq!(second.records, first.records);

        let third = fetch_logprobs(&client, &[ex(1, "c", "d")], &template, &mut reopened).unwrap();
        assert!(third.records.is_empty());
        assert_eq!(third.failures[0].example_id, 1);
    }

    #[test]
    fn fetch_rejects_missing_offsets() {
        let server = testing::serve(1, |_, req| {
            (200, json!({"tokens": [req["prompt"]], "logprobs": [-0.5]}))
        });
        let client = LogprobClient {
            model_id: "m".into(),
            endpoint: EndpointConfig::new(&server.url),
            max_in_flight: 2,
        };
        let err = fetch_logprobs(&client, &[ex(0, "a", "b")], &PromptTemplate::default(), &mut LogprobCache::in_memory())
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
