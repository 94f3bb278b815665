use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;
use serde_json::{json, Value};

use memtrace_core::analysis::{
    self, bin_by_mass, decontaminate, influence_average, novelty_count, BinSpec, GradientDumps, Generation,
    InfluenceInputs, LmKind, MemorizationInputs, NoveltyConfig, PValueMethod, RetrievalScheme,
};
use memtrace_core::bridge::{self, load_records, LogprobCache, LogprobClient};
use memtrace_core::corpus::read_manifest;
use memtrace_core::embedding::{EmbeddingCache, EmbeddingProvider, HashProjectionEmbedder, HttpEmbedder};
use memtrace_core::http::EndpointConfig;
use memtrace_core::miner::{self, MiningConfig, TaskGramTable, ThresholdTable};
use memtrace_core::ngram::find_subsequence;
use memtrace_core::prompt_opt::{self, HttpRewriter, MockRewriter, Objective, OptimizeConfig, Rewriter};
use memtrace_core::{
    infgram, load_task_dataset, sha256_hex, tokenize, CorpusIndex, CorpusStore, NGram, NGramPair, PromptTemplate,
    TaskExample, TaskGramLM, TokenLogProbRecord, TokenizerConfig,
};

use crate::args::*;
use crate::config::{write_json, write_text, RunConfig};
use crate::error::CliError;
use crate::report;

pub const ARTIFACT_VERSION: u32 = 1;

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| CliError::new("missing_argument", format!("{what} required")).into())
}

fn tokenizer(cfg: &RunConfig) -> TokenizerConfig {
    TokenizerConfig {
        lowercase: cfg.lowercase,
    }
}

fn open_index(cfg: &RunConfig) -> Result<CorpusIndex> {
    if !cfg.store.join("manifest.json").exists() {
        return Err(CliError::new(
            "missing_index",
            format!("no corpus store under {}; run `index build` first", cfg.store.display()),
        )
        .into());
    }
    Ok(CorpusIndex::load_or_build(&cfg.store, cfg.n_pair_max)?)
}

fn task(cfg: &RunConfig) -> Result<Vec<TaskExample>> {
    Ok(load_task_dataset(need(&cfg.task, "task")?)?)
}

fn table_lm(cfg: &RunConfig) -> Result<TaskGramLM> {
    let table = TaskGramTable::load(need(&cfg.table, "table")?)?;
    Ok(TaskGramLM::new(table)?)
}

fn template(cfg: &RunConfig) -> Result<PromptTemplate> {
    Ok(PromptTemplate::new(cfg.instruction.clone(), cfg.template.clone())?)
}

fn gamma(cfg: &RunConfig) -> Result<f64> {
    if let Some(g) = cfg.gamma {
        return Ok(g);
    }
    ThresholdTable::defaults().gamma(&cfg.family, cfg.n).ok_or_else(|| {
        CliError::new(
            "missing_argument",
            format!("gamma required: no default threshold for family {:?} at n={}", cfg.family, cfg.n),
        )
        .into()
    })
}

fn provider(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>> {
    match cfg.embedder.as_str() {
        "hash" => Ok(Box::new(HashProjectionEmbedder::new(cfg.embed_dim, cfg.seed))),
        "http" => {
            let url = need(&cfg.embed_url, "embed_url")?;
            Ok(Box::new(HttpEmbedder::new(format!("http:{url}"), EndpointConfig::new(url.clone()))))
        }
        other => Err(CliError::new("invalid_argument", format!("unknown embedder {other:?}")).into()),
    }
}

fn records_by_example(path: &Path, model: Option<&str>) -> Result<HashMap<u32, TokenLogProbRecord>> {
    let mut out = HashMap::new();
    for r in load_records(path)? {
        if model.is_some_and(|m| m != r.model_id) {
            continue;
        }
        let id = r.example_id;
        if out.insert(id, r).is_some() {
            return Err(CliError::new(
                "validation",
                format!("several records for example {id}; select one with --model-id"),
            )
            .into());
        }
    }
    Ok(out)
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string(v).expect("value serializes"));
}

fn jsonl(values: impl IntoIterator<Item = Value>) -> String {
    let mut s = String::new();
    for v in values {
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

/// Writes `<out>/<name>.json` wrapped in the common artifact envelope.
fn write_artifact(cfg: &RunConfig, name: &str, kind: &str, corpus_digest: &str, result: Value) -> Result<PathBuf> {
    let path = cfg.out.join(format!("{name}.json"));
    write_json(
        &path,
        &json!({
            "artifact": kind,
            "format_version": ARTIFACT_VERSION,
            "corpus_digest": corpus_digest,
            "result": result,
        }),
    )?;
    Ok(path)
}

pub fn run(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    cfg.write_effective(cmd.name())?;
    match cmd {
        Command::Index(c) => index(c, cfg),
        Command::Mine(a) => mine(a, cfg),
        Command::Tasklm(c) => tasklm(c, cfg),
        Command::Infgram(c) => infgram_cmd(c, cfg),
        Command::Probs(c) => probs(c, cfg),
        Command::Analyze(c) => analyze(c, cfg),
        Command::PromptOpt(a) => prompt_opt_cmd(a, cfg),
        Command::Report => report::run(cfg),
    }
}

fn index(c: &IndexCmd, cfg: &RunConfig) -> Result<()> {
    let tk = tokenizer(cfg);
    match c {
        IndexCmd::Build => {
            let corpus = need(&cfg.corpus, "corpus")?;
            let bytes = std::fs::read(corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let source_digest = sha256_hex(&bytes);
            if let Ok(m) = read_manifest(&cfg.store) {
                if m.source_digest == source_digest
                    && m.tokenizer == tk
                    && CorpusIndex::is_current(&cfg.store, cfg.n_pair_max)
                {
                    log::info!("index under {} is up to date", cfg.store.display());
                    print(&json!({"status": "up_to_date", "manifest": m}));
                    return Ok(());
                }
            }
            let idx = CorpusIndex::build(CorpusStore::ingest(corpus, &tk)?, cfg.n_pair_max)?;
            idx.save(&cfg.store)?;
            print(&json!({"status": "built", "manifest": idx.store().manifest()}));
        }
        IndexCmd::Count(a) => {
            let idx = open_index(cfg)?;
            let g = NGram::from_text(&a.ngram, idx.store().tokenizer())?;
            print(&json!({"ngram": g, "count": idx.count_occurrences(&g)}));
        }
        IndexCmd::PairCount(a) => {
            let idx = open_index(cfg)?;
            let t = idx.store().tokenizer();
            let p = NGramPair::new(NGram::from_text(&a.source, t)?, NGram::from_text(&a.target, t)?)?;
            print(&json!({
                "source": p.source,
                "target": p.target,
                "cooccurrence": idx.count_pair_cooccurrence_any(&p),
                "source_count": idx.count_occurrences(&p.source),
            }));
        }
        IndexCmd::Docs(a) => {
            let idx = open_index(cfg)?;
            let t = idx.store().tokenizer();
            let g = NGram::from_text(&a.ngram, t)?;
            let mut docs = match &a.target {
                None => idx.documents_for(&g),
                Some(target) => {
                    let p = NGramPair::new(g.clone(), NGram::from_text(target, t)?)?;
                    memtrace_core::index::intersect(&idx.documents_for(&p.source), &idx.documents_for(&p.target))
                }
            };
            let total = docs.len();
            docs.truncate(a.limit);
            print(&json!({"ngram": g, "target": a.target, "total": total, "doc_ids": docs}));
        }
    }
    Ok(())
}

fn mine(a: &MineArgs, cfg: &RunConfig) -> Result<()> {
    let examples = task(cfg)?;
    let task_path = need(&cfg.task, "task")?;
    let idx = open_index(cfg)?;
    let provider = provider(cfg)?;
    let out = cfg.table.clone().unwrap_or_else(|| cfg.out.join("table.jsonl"));
    let mut mc = MiningConfig::new(
        task_path.file_stem().map_or("task".into(), |s| s.to_string_lossy().into_owned()),
        cfg.n,
        gamma(cfg)?,
    );
    mc.whole_output_as_target = a.whole_output;
    if let Some(cap) = a.candidate_cap {
        mc.candidate_cap = cap;
    }
    let stamp_path = PathBuf::from(format!("{}.stamp", out.display()));
    let stamp = sha256_hex(
        json!({
            "task": sha256_hex(&std::fs::read(task_path)?),
            "corpus": idx.store().manifest().content_digest,
            "task_id": mc.task_id,
            "n": mc.n,
            "gamma": mc.gamma,
            "provider": provider.provider_id(),
            "whole_output": mc.whole_output_as_target,
            "cap": mc.candidate_cap,
        })
        .to_string()
        .as_bytes(),
    );
    if out.exists() && std::fs::read_to_string(&stamp_path).is_ok_and(|s| s.trim() == stamp) {
        log::info!("table {} is up to date", out.display());
        print(&json!({"status": "up_to_date", "table": out}));
        return Ok(());
    }
    let mut cache = EmbeddingCache::open(&cfg.out.join("cache").join("embeddings.jsonl"))?;
    let table = miner::mine(&examples, &idx, provider.as_ref(), &mut cache, &mc)?;
    table.save(&out)?;
    write_text(&stamp_path, &format!("{stamp}\n"))?;
    print(&json!({
        "status": "mined",
        "table": out,
        "entries": table.len(),
        "gamma": mc.gamma,
        "provider": provider.provider_id(),
    }));
    Ok(())
}

fn tasklm(c: &TasklmCmd, cfg: &RunConfig) -> Result<()> {
    let lm = table_lm(cfg)?;
    let tk = tokenizer(cfg);
    match c {
        TasklmCmd::Prob(a) => {
            let p = NGramPair::new(NGram::from_text(&a.source, &tk)?, NGram::from_text(&a.target, &tk)?)?;
            let prob = lm.pair_probability(&p)?;
            print(&json!({"source": p.source, "target": p.target, "probability": prob, "log_probability": prob.ln()}));
        }
        TasklmCmd::Mass => {
            let examples = task(cfg)?;
            let rows = examples.iter().map(|ex| {
                json!({
                    "example_id": ex.example_id,
                    "pairs": lm.find_pairs_in_example(ex, &tk).len(),
                    "mass": lm.example_pair_mass(ex, &tk),
                    "score": ex.score,
                })
            });
            let path = cfg.out.join("mass.jsonl");
            write_text(&path, &jsonl(rows))?;
            print(&json!({"written": path, "examples": examples.len()}));
        }
    }
    Ok(())
}

fn infgram_cmd(c: &InfgramCmd, cfg: &RunConfig) -> Result<()> {
    let idx = open_index(cfg)?;
    let tk = idx.store().tokenizer().clone();
    match c {
        InfgramCmd::Prob(a) => {
            let ctx = tokenize(&a.context, &tk);
            let token = tokenize(&a.token, &tk);
            if token.len() != 1 {
                return Err(CliError::new("invalid_argument", "token must be a single word token").into());
            }
            let r = infgram::token_probability(&idx, &ctx, &token[0]);
            print(&json!({
                "token": r.token,
                "n_i": r.n_i(),
                "numerator": r.numerator,
                "denominator": r.denominator,
                "probability": r.probability,
            }));
        }
        InfgramCmd::Batch => {
            let lm = table_lm(cfg)?;
            let examples = task(cfg)?;
            let u = tokenize(&template(cfg)?.instruction, &tk);
            let mut rows = Vec::new();
            for ex in &examples {
                let x = tokenize(&ex.input, &tk);
                let y = tokenize(&ex.output, &tk);
                for p in lm.find_pairs_in_tokens(&x, &y) {
                    let start = find_subsequence(&y, p.target.tokens()).expect("targets occur in the output");
                    let s = infgram::span_probability(&idx, &u, &x, &y, start..start + p.target.n())?;
                    rows.push(json!({
                        "example_id": ex.example_id,
                        "sx": p.source,
                        "sy": p.target,
                        "log_prob": s.log_prob,
                        "zero_tokens": s.zero_tokens,
                        "n_i": s.tokens.iter().map(|t| t.n_i()).collect::<Vec<_>>(),
                    }));
                }
            }
            let path = cfg.out.join("infgram.jsonl");
            let n = rows.len();
            write_text(&path, &jsonl(rows))?;
            print(&json!({"written": path, "spans": n}));
        }
    }
    Ok(())
}

fn probs(c: &ProbsCmd, cfg: &RunConfig) -> Result<()> {
    let examples = task(cfg)?;
    let tpl = template(cfg)?;
    let records_path = cfg.records.clone().unwrap_or_else(|| cfg.out.join("logprobs.jsonl"));
    match c {
        ProbsCmd::Fetch => {
            let client = LogprobClient {
                model_id: need(&cfg.model_id, "model_id")?.clone(),
                endpoint: EndpointConfig::new(need(&cfg.model_endpoint, "model_endpoint")?.clone()),
                max_in_flight: 4,
            };
            let mut cache = LogprobCache::open(&records_path)?;
            let rep = bridge::fetch_logprobs(&client, &examples, &tpl, &mut cache)?;
            print(&json!({
                "records": records_path,
                "fetched": rep.records.len() - rep.cache_hits,
                "cache_hits": rep.cache_hits,
                "failures": rep.failures,
            }));
            if !rep.failures.is_empty() {
                return Err(CliError::new("transport", format!("{} examples failed", rep.failures.len())).into());
            }
        }
        ProbsCmd::Validate => {
            let recs = records_by_example(&records_path, cfg.model_id.as_deref())?;
            let mut invalid = Vec::new();
            let mut missing = Vec::new();
            for ex in &examples {
                match recs.get(&ex.example_id) {
                    None => missing.push(ex.example_id),
                    Some(r) => {
                        if let Err(e) = r.validate_against(&tpl.render(&ex.input, &ex.output)?) {
                            invalid.push(json!({"example_id": ex.example_id, "message": e.to_string()}));
                        }
                    }
                }
            }
            print(&json!({"records": recs.len(), "invalid": invalid, "missing": missing}));
            if !invalid.is_empty() {
                return Err(CliError::new("validation", format!("{} invalid records", invalid.len())).into());
            }
        }
        ProbsCmd::Align => {
            let lm = table_lm(cfg)?;
            let tk = tokenizer(cfg);
            let recs = records_by_example(&records_path, cfg.model_id.as_deref())?;
            let mut rows = Vec::new();
            for ex in &examples {
                let Some(r) = recs.get(&ex.example_id) else { continue };
                let rendered = tpl.render(&ex.input, &ex.output)?;
                r.validate_against(&rendered)?;
                for p in lm.find_pairs_in_example(ex, &tk) {
                    let Some(span) = bridge::target_char_span(&rendered, &ex.output, &p.target, &tk) else {
                        continue;
                    };
                    let a = bridge::align_span(r, &rendered, span)?;
                    rows.push(json!({
                        "example_id": ex.example_id,
                        "sx": p.source,
                        "sy": p.target,
                        "char_range": [a.char_range.start, a.char_range.end],
                        "token_range": [a.token_range.start, a.token_range.end],
                        "exact": a.exact,
                        "logprob": bridge::span_logprob(r, &a),
                    }));
                }
            }
            let path = cfg.out.join("aligned.jsonl");
            let n = rows.len();
            write_text(&path, &jsonl(rows))?;
            print(&json!({"written": path, "spans": n}));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct GenerationLine {
    example_id: Option<u32>,
    input: String,
    generated: String,
}

fn analyze(c: &AnalyzeCmd, cfg: &RunConfig) -> Result<()> {
    match c {
        AnalyzeCmd::Memorization(a) => {
            let kind: LmKind = a.lm.parse()?;
            let table = need(&cfg.table, "table")?;
            let records = need(&cfg.records, "records")?;
            let lm = TaskGramLM::new(TaskGramTable::load(table)?)?;
            let examples = task(cfg)?;
            let idx = match kind {
                LmKind::Infgram => Some(open_index(cfg)?),
                LmKind::Taskgram => None,
            };
            let recs = records_by_example(records, cfg.model_id.as_deref())?;
            let tpl = template(cfg)?;
            let tk = tokenizer(cfg);
            let inputs = MemorizationInputs {
                lm: &lm,
                index: idx.as_ref(),
                examples: &examples,
                records: &recs,
                template: &tpl,
                tokenizer: &tk,
            };
            let assembly = analysis::assemble_observations(kind, &inputs)?;
            let method = if a.permutation {
                PValueMethod::Permutation
            } else {
                PValueMethod::TApproximation
            };
            let res = analysis::distributional_memorization(kind, &assembly, method)?;
            let name = match kind {
                LmKind::Taskgram => "memorization_taskgram",
                LmKind::Infgram => "memorization_infgram",
            };
            let obs = assembly.observations.iter().map(|o| serde_json::to_value(o).expect("serializes"));
            write_text(&cfg.out.join(format!("{name}.observations.jsonl")), &jsonl(obs))?;
            let report = res.report_json();
            write_artifact(cfg, name, "memorization", &lm.table().header.corpus_digest, report.clone())?;
            print(&report);
        }
        AnalyzeCmd::Novelty(a) => {
            let idx = open_index(cfg)?;
            let mut gens = Vec::new();
            let text = std::fs::read_to_string(&a.generations)
                .with_context(|| format!("reading {}", a.generations.display()))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let g: GenerationLine = serde_json::from_str(line)
                    .map_err(|e| CliError::new("malformed_input", format!("line {}: {e}", i + 1)))?;
                gens.push(Generation {
                    example_id: g.example_id.unwrap_or(gens.len() as u32),
                    input: g.input,
                    generated: g.generated,
                });
            }
            let provider = provider(cfg)?;
            let mut cache = EmbeddingCache::open(&cfg.out.join("cache").join("embeddings.jsonl"))?;
            let nc = NoveltyConfig::new(cfg.n, gamma(cfg)?);
            let rep = novelty_count(&idx, provider.as_ref(), &mut cache, &nc, &tokenizer(cfg), &gens)?;
            let result = json!({
                "n": cfg.n,
                "gamma": nc.gamma,
                "provider": provider.provider_id(),
                "total_similar": rep.total_similar,
                "total_novel": rep.total_novel,
                "per_example": rep.per_example,
            });
            write_artifact(cfg, "novelty", "novelty", &idx.store().manifest().content_digest, result)?;
            print(&json!({"total_similar": rep.total_similar, "total_novel": rep.total_novel}));
        }
        AnalyzeCmd::Decontam(a) => {
            let idx = open_index(cfg)?;
            let examples = task(cfg)?;
            let rep = decontaminate(&idx, &examples, &a.sizes, &tokenizer(cfg));
            write_text(&cfg.out.join("decontam.jsonl"), &rep.to_jsonl()?)?;
            let summary = json!({
                "n_values": rep.n_values,
                "examples": rep.examples.len(),
                "flagged": rep.flagged(),
                "flagged_ids": rep.examples.iter().filter(|e| e.contaminated).map(|e| e.example_id).collect::<Vec<_>>(),
            });
            write_artifact(cfg, "decontam", "decontamination", &idx.store().manifest().content_digest, summary.clone())?;
            print(&summary);
        }
        AnalyzeCmd::Influence(a) => {
            let grads = GradientDumps::open(need(&cfg.grads, "grads")?)?;
            let idx = open_index(cfg)?;
            let lm = table_lm(cfg)?;
            let examples = task(cfg)?;
            let scheme: RetrievalScheme = a.scheme.parse()?;
            let tk = tokenizer(cfg);
            let inputs = InfluenceInputs {
                grads: &grads,
                index: &idx,
                lm: &lm,
                examples: &examples,
                tokenizer: &tk,
            };
            let avg = influence_average(&inputs, scheme, a.r, cfg.seed)?;
            write_text(&cfg.out.join("influence.csv"), &avg.to_csv())?;
            let result = json!({
                "scheme": avg.scheme,
                "r": avg.r,
                "seed": avg.seed,
                "value": avg.value,
                "examples_used": avg.examples_used,
                "skipped": avg.skipped,
                "shortfalls": avg.shortfalls,
                "records": avg.records.len(),
            });
            write_artifact(cfg, "influence", "influence", &idx.store().manifest().content_digest, result.clone())?;
            print(&result);
        }
        AnalyzeCmd::Bins(a) => {
            let lm = table_lm(cfg)?;
            let examples = task(cfg)?;
            let tk = tokenizer(cfg);
            let scored: Vec<&TaskExample> = examples.iter().filter(|e| e.score.is_some()).collect();
            if scored.is_empty() {
                return Err(CliError::new("missing_argument", "scores required: no task example has a score").into());
            }
            let masses: Vec<f64> = scored.iter().map(|e| lm.example_pair_mass(e, &tk) as f64).collect();
            let scores: Vec<f64> = scored.iter().map(|e| e.score.expect("filtered")).collect();
            let spec = match (a.bins, a.width, &a.edges) {
                (_, Some(w), _) => BinSpec::Width(w),
                (_, _, Some(e)) => BinSpec::Edges(e.clone()),
                (Some(k), _, _) => BinSpec::Count(k),
                _ => BinSpec::default(),
            };
            let b = bin_by_mass(&masses, &scores, &spec)?;
            write_text(&cfg.out.join("bins.csv"), &b.to_csv())?;
            let result = json!({
                "spec": spec,
                "unscored": examples.len() - scored.len(),
                "edges": b.edges,
                "counts": b.counts,
                "means": b.means,
            });
            write_artifact(cfg, "bins", "bins", &lm.table().header.corpus_digest, result.clone())?;
            print(&result);
        }
    }
    Ok(())
}

fn prompt_opt_cmd(a: &PromptOptArgs, cfg: &RunConfig) -> Result<()> {
    let objective: Objective = a.objective.parse()?;
    let idx = open_index(cfg)?;
    let examples = match &cfg.task {
        Some(_) => task(cfg)?,
        None => Vec::new(),
    };
    let mut rewriter: Box<dyn Rewriter> = match (&a.rewriter_url, &a.mock_candidates) {
        (Some(url), _) => Box::new(HttpRewriter {
            endpoint: EndpointConfig::new(url.clone()),
        }),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Box::new(MockRewriter::new(
                text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect(),
            ))
        }
        (None, None) => {
            return Err(CliError::new("missing_argument", "rewriter required: pass --rewriter-url or --mock-candidates").into())
        }
    };
    let mut oc = OptimizeConfig::new(objective, a.iters);
    oc.n = cfg.n;
    let trace = prompt_opt::optimize(rewriter.as_mut(), &idx, &examples, &a.init, &oc)?;
    write_text(&cfg.out.join("prompt_opt.trace.jsonl"), &trace.to_jsonl()?)?;
    write_text(&cfg.out.join("best_prompt.txt"), &format!("{}\n", trace.best().text))?;
    let best = trace.best();
    let result = json!({
        "objective": trace.objective,
        "n": trace.n,
        "iterations": a.iters,
        "meta_prompt_digest": trace.meta_prompt_digest,
        "initial_reward": trace.candidates[0].reward,
        "best_reward": best.reward,
        "best_iteration": best.iteration,
        "best_prompt": best.text,
        "failures": trace.failures.len(),
    });
    write_artifact(cfg, "prompt_opt", "prompt_opt", &idx.store().manifest().content_digest, result.clone())?;
    print(&result);
    Ok(())
}
