//! Iterative prompt rewriting scored by how often the prompt's n-grams occur
//! in the corpus.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::TaskExample;
use crate::error::{Error, Result};
use crate::http::EndpointConfig;
use crate::index::CorpusIndex;
use crate::util::sha256_hex;

pub const META_PROMPT_TEMPLATE: &str = include_str!("../config/meta_prompt.txt");
pub const DEFAULT_REWARD_N: usize = 3;
pub const DEFAULT_EXAMPLES_SHOWN: usize = 5;

/// Mean corpus count over every length-`n` window of the tokenized prompt,
/// repeated windows included. Prompts shorter than `n` score 0.
pub fn reward(index: &CorpusIndex, prompt: &str, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let ids: Vec<Option<u32>> = index
        .store()
        .tokenize(prompt)
        .iter()
        .map(|w| index.store().vocab().id(w))
        .collect();
    if ids.len() < n {
        return 0.0;
    }
    let windows: Vec<&[Option<u32>]> = ids.windows(n).collect();
    let total: u64 = windows
        .par_iter()
        .map(|w| {
            w.iter()
                .copied()
                .collect::<Option<Vec<u32>>>()
                .map_or(0, |ids| index.count_ids(&ids))
        })
        .sum();
    total as f64 / windows.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Maximize,
    Minimize,
}

impl Objective {
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Objective::Maximize => candidate > incumbent,
            Objective::Minimize => candidate < incumbent,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize" => Ok(Objective::Maximize),
            "minimize" => Ok(Objective::Minimize),
            other => Err(Error::InvalidArgument(format!("unknown objective {other:?}"))),
        }
    }
}

fn keep_branch(text: &str, keep: &str, drop: &str) -> String {
    let mut out = text.to_owned();
    let (open, close) = (format!("{{{{#{drop}}}}}\n"), format!("{{{{/{drop}}}}}\n"));
    if let (Some(a), Some(b)) = (out.find(&open), out.find(&close)) {
        out.replace_range(a..b + close.len(), "");
    }
    out.replace(&format!("{{{{#{keep}}}}}\n"), "")
        .replace(&format!("{{{{/{keep}}}}}\n"), "")
}

/// Renders the meta prompt for one objective with the example pairs filled in.
pub fn render_meta_prompt(template: &str, objective: Objective, examples: &[TaskExample]) -> String {
    let (text, direction) = match objective {
        Objective::Maximize => (keep_branch(template, "maximize", "minimize"), "higher"),
        Objective::Minimize => (keep_branch(template, "minimize", "maximize"), "lower"),
    };
    let mut pairs = String::new();
    for ex in examples {
        let _ = writeln!(pairs, "Input: {}\nOutput: {}\n", ex.input, ex.output);
    }
    text.replace("{examples}", pairs.trim_end())
        .replace("{direction}", direction)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_owned(),
            content: content.into(),
        }
    }
}

pub trait Rewriter {
    fn rewrite(&mut self, messages: &[ChatMessage]) -> Result<String>;
}

/// Chat-completion endpoint: `{"messages": [...]}` in, `{"text": ...}` out.
#[derive(Clone, Debug)]
pub struct HttpRewriter {
    pub endpoint: EndpointConfig,
}

impl Rewriter for HttpRewriter {
    fn rewrite(&mut self, messages: &[ChatMessage]) -> Result<String> {
        let reply = self.endpoint.post_json(&json!({ "messages": messages }))?;
        reply
            .get("text")
            .and_then(|t| t.as_str())
            .map(str::to_owned)
            .ok_or_else(|| Error::Format("rewriter reply has no \"text\" field".into()))
    }
}

/// Returns fixed candidates in a cycle; calls listed in `fail_on` (0-based)
/// fail with a transport error instead.
#[derive(Clone, Debug, Default)]
pub struct MockRewriter {
    pub candidates: Vec<String>,
    pub fail_on: Vec<usize>,
    calls: usize,
    served: usize,
}

impl MockRewriter {
    pub fn new(candidates: Vec<String>) -> Self {
        MockRewriter {
            candidates,
            ..Default::default()
        }
    }

    pub fn failing_on(mut self, calls: Vec<usize>) -> Self {
        self.fail_on = calls;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Rewriter for MockRewriter {
    fn rewrite(&mut self, _messages: &[ChatMessage]) -> Result<String> {
        let call = self.calls;
        self.calls += 1;
        if self.fail_on.contains(&call) {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("mock failure on call {call}"),
            });
        }
        if self.candidates.is_empty() {
            return Err(Error::InvalidArgument("mock rewriter has no candidates".into()));
        }
        let out = self.candidates[self.served % self.candidates.len()].clone();
        self.served += 1;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub text: String,
    pub iteration: usize,
    pub reward: f64,
    /// Iteration of the prompt that was rewritten; `None` for the initial one.
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewriteFailure {
    pub iteration: usize,
    pub attempts: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub iteration: usize,
    pub candidate_iteration: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub objective: Objective,
    pub n: usize,
    pub meta_prompt_digest: String,
    pub candidates: Vec<PromptCandidate>,
    /// One entry per iteration, starting with the initial prompt at 0.
    pub best_so_far: Vec<BestSoFar>,
    pub failures: Vec<RewriteFailure>,
}

impl OptimizationTrace {
    pub fn best(&self) -> &PromptCandidate {
        let last = self.best_so_far.last().expect("trace has an initial entry");
        self.candidates
            .iter()
            .find(|c| c.iteration == last.candidate_iteration)
            .expect("best candidate is recorded")
    }

    /// Header line, then candidates, failures and the per-iteration best.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut line = |v: serde_json::Value| -> Result<()> {
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
            Ok(())
        };
        line(json!({
            "kind": "header",
            "objective": self.objective,
            "n": self.n,
            "meta_prompt_digest": self.meta_prompt_digest,
        }))?;
        for c in &self.candidates {
            let mut v = serde_json::to_value(c)?;
            v["kind"] = json!("candidate");
            line(v)?;
        }
        for f in &self.failures {
            let mut v = serde_json::to_value(f)?;
            v["kind"] = json!("failure");
            line(v)?;
        }
        for b in &self.best_so_far {
            let mut v = serde_json::to_value(b)?;
            v["kind"] = json!("best");
            line(v)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeConfig {
    pub objective: Objective,
    pub iterations: usize,
    pub n: usize,
    pub examples_shown: usize,
    pub meta_template: String,
}

impl OptimizeConfig {
    pub fn new(objective: Objective, iterations: usize) -> Self {
        OptimizeConfig {
            objective,
            iterations,
            n: DEFAULT_REWARD_N,
            examples_shown: DEFAULT_EXAMPLES_SHOWN,
            meta_template: META_PROMPT_TEMPLATE.to_owned(),
        }
    }
}

fn status_message(current: &PromptCandidate, history: &[PromptCandidate], n: usize) -> String {
    let mut s = format!(
        "Current prompt:\n{}\n\nMemorization score (average {n}-gram count): {}\n\nHistory:\n",
        current.text, current.reward
    );
    for c in history {
        let _ = writeln!(s, "- iteration {} (score {}): {}", c.iteration, c.reward, c.text);
    }
    s
}

/// Runs the rewrite loop. The prompt handed to the rewriter at each step is
/// the best one so far; a failed rewrite is retried once and then skipped.
pub fn optimize(
    rewriter: &mut dyn Rewriter,
    index: &CorpusIndex,
    examples: &[TaskExample],
    initial: &str,
    config: &OptimizeConfig,
) -> Result<OptimizationTrace> {
    if config.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let shown = &examples[..examples.len().min(config.examples_shown)];
    let meta = render_meta_prompt(&config.meta_template, config.objective, shown);
    let mut trace = OptimizationTrace {
        objective: config.objective,
        n: config.n,
        meta_prompt_digest: sha256_hex(config.meta_template.as_bytes()),
        candidates: vec![PromptCandidate {
            text: initial.to_owned(),
            iteration: 0,
            reward: reward(index, initial, config.n),
            parent: None,
        }],
        best_so_far: Vec::new(),
        failures: Vec::new(),
    };
    let mut best = 0;
    trace.best_so_far.push(BestSoFar {
        iteration: 0,
        candidate_iteration: 0,
        reward: trace.candidates[0].reward,
    });
    for it in 1..=config.iterations {
        let current = &trace.candidates[best];
        let messages = [
            ChatMessage::new("system", meta.clone()),
            ChatMessage::new("user", status_message(current, &trace.candidates, config.n)),
        ];
        let parent = current.iteration;
        let result = rewriter.rewrite(&messages).or_else(|e| {
            log::warn!("rewrite at iteration {it} failed ({e}); retrying once");
            rewriter.rewrite(&messages)
        });
        match result {
            Ok(text) => {
                let text = text.trim().to_owned();
                let r = reward(index, &text, config.n);
                trace.candidates.push(PromptCandidate {
                    text,
                    iteration: it,
                    reward: r,
                    parent: Some(parent),
                });
                if config.objective.improves(r, trace.candidates[best].reward) {
                    best = trace.candidates.len() - 1;
                }
            }
            Err(e) => trace.failures.push(RewriteFailure {
                iteration: it,
                attempts: 2,
                message: e.to_string(),
            }),
        }
        trace.best_so_far.push(BestSoFar {
            iteration: it,
            candidate_iteration: trace.candidates[best].iteration,
            reward: trace.candidates[best].reward,
        });
    }
    Ok(trace)
}
