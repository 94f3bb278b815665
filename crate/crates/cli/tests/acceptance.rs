//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Every expected value is computed here, independently of the library
//! (naive scans, hand arithmetic, direct sampling), and compared with the
//! library's answer.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use memtrace_core::analysis::{
    assemble_observations, decontaminate, distributional_memorization, influence_average, influence_pairwise,
    kendall_tau_distance, spearman_rho, Assembly, GradKind, GradientDumps, InMemoryGradients, InfluenceInputs,
    LmKind, MemorizationInputs, PValueMethod, RetrievalScheme,
};
use memtrace_core::index::CorpusIndex;
use memtrace_core::infgram::{span_probability, token_probability};
use memtrace_core::miner::{mine, TableEntry, TableHeader, TABLE_FORMAT_VERSION};
use memtrace_core::prompt_opt::{optimize, MockRewriter, OptimizeConfig};
use memtrace_core::{
    load_task_dataset, tokenize, CorpusStore, EmbeddingCache, HashProjectionEmbedder, MiningConfig, NGram, NGramPair,
    Objective, PromptTemplate, TaskExample, TaskGramLM, TaskGramTable, ThresholdTable, TokenLogProbRecord,
    TokenizerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tok() -> TokenizerConfig {
    TokenizerConfig::default()
}

fn toks(s: &str) -> Vec<String> {
    tokenize(s, &tok())
}

fn gram(s: &str) -> NGram {
    NGram::new(toks(s)).unwrap()
}

// ---- naive oracles ----

fn naive_count(docs: &[Vec<String>], q: &[String]) -> u64 {
    docs.iter()
        .map(|d| d.windows(q.len()).filter(|w| *w == q).count() as u64)
        .sum()
}

fn naive_docs(docs: &[Vec<String>], q: &[String]) -> Vec<u32> {
    (0..docs.len() as u32)
        .filter(|&i| docs[i as usize].windows(q.len()).any(|w| w == q))
        .collect()
}

fn naive_suffix(docs: &[Vec<String>], ctx: &[String]) -> (usize, u64) {
    (1..=ctx.len())
        .rev()
        .map(|k| (k, naive_count(docs, &ctx[ctx.len() - k..])))
        .find(|&(_, c)| c > 0)
        .unwrap_or((0, 0))
}

fn build(docs: &[Vec<String>]) -> CorpusIndex {
    let texts: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
    CorpusIndex::build(CorpusStore::from_texts("acc", &texts, &tok()).unwrap(), 8).unwrap()
}

fn store_docs(idx: &CorpusIndex) -> Vec<Vec<String>> {
    (0..idx.store().document_count() as u32)
        .map(|d| idx.store().tokenized(d).tokens)
        .collect()
}

fn random_words(rng: &mut ChaCha8Rng, len: usize, vocab: u32) -> Vec<String> {
    (0..len).map(|_| format!("v{}", rng.random_range(0..vocab))).collect()
}

// ---- criteria ----

fn c1_count_oracle() -> Result<String> {
    let start = Instant::now();
    let mut queries_checked = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_docs = rng.random_range(1..=50);
        let docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| {
                let len = rng.random_range(1..=40);
                random_words(&mut rng, len, 20)
            })
            .collect();
        let idx = build(&docs);
        // queries: corpus substrings plus random (often absent) sequences
        let mut queries: Vec<Vec<String>> = Vec::new();
        for _ in 0..30 {
            let d = &docs[rng.random_range(0..docs.len())];
            let n = rng.random_range(1..=d.len().min(8));
            let s = rng.random_range(0..=d.len() - n);
            queries.push(d[s..s + n].to_vec());
            let len = rng.random_range(1..=6);
            queries.push(random_words(&mut rng, len, 21));
        }
        for q in &queries {
            queries_checked += 1;
            let g = NGram::new(q.clone()).unwrap();
            let want_docs = naive_docs(&docs, q);
            ensure!(idx.count_occurrences(&g) == naive_count(&docs, q), "seed {seed}: count of {g}");
            ensure!(idx.doc_frequency(&g)? == want_docs.len() as u64, "seed {seed}: doc_frequency of {g}");
            let (len, count) = naive_suffix(&docs, q);
            let m = idx.longest_suffix_context(q)?;
            ensure!((m.suffix_len, m.count) == (len, count), "seed {seed}: suffix of {g}");
        }
        for w in queries.windows(2) {
            let Ok(p) = NGramPair::new(NGram::new(w[0].clone())?, NGram::new(w[1].clone())?) else {
                continue;
            };
            let a = naive_docs(&docs, &w[0]);
            let b = naive_docs(&docs, &w[1]);
            let both = a.iter().filter(|d| b.contains(d)).count() as u64;
            ensure!(idx.count_pair_cooccurrence(&p)? == both, "seed {seed}: pair {p}");
        }
        let examples: Vec<TaskExample> = (0..10)
            .map(|i| {
                let x = if i % 2 == 0 {
                    let d = &docs[rng.random_range(0..docs.len())];
                    let extra = random_words(&mut rng, 4, 21);
                    d.iter().take(12).cloned().chain(extra).collect::<Vec<_>>()
                } else {
                    random_words(&mut rng, 14, 21)
                };
                let y = random_words(&mut rng, 10, 21);
                TaskExample {
                    example_id: i,
                    input: x.join(" "),
                    output: y.join(" "),
                    score: None,
                }
            })
            .collect();
        let n_values = [3usize, 5, 8];
        let rep = decontaminate(&idx, &examples, &n_values, &tok());
        for (ex, r) in examples.iter().zip(&rep.examples) {
            let mut want = BTreeSet::new();
            for side in [&ex.input, &ex.output] {
                let t = toks(side);
                for &n in &n_values {
                    for w in t.windows(n) {
                        if naive_count(&docs, w) > 0 {
                            want.insert((w.to_vec(), naive_docs(&docs, w)));
                        }
                    }
                }
            }
            let got: BTreeSet<(Vec<String>, Vec<u32>)> =
                r.offending.iter().map(|o| (o.ngram.tokens().to_vec(), o.doc_ids.clone())).collect();
            ensure!(r.contaminated == !want.is_empty(), "seed {seed}: example {} flag", ex.example_id);
            ensure!(got == want, "seed {seed}: example {} offending set", ex.example_id);
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("100 corpora, {queries_checked} queries, {:.2}s", elapsed.as_secs_f64()))
}

fn c2_stats_references() -> Result<String> {
    let inc = [1.0, 2.0, 3.0, 4.0, 5.0];
    let dec = [9.0, 7.0, 5.0, 3.0, 1.0];
    let r = spearman_rho(&inc, &[10.0, 20.0, 30.0, 40.0, 50.0])?;
    ensure!((r.value - 1.0).abs() <= 1e-12, "monotone rho {}", r.value);
    ensure!(r.p_value == Some(0.0), "p at rho=1 is {:?}", r.p_value);
    let r = spearman_rho(&inc, &dec)?;
    ensure!((r.value + 1.0).abs() <= 1e-12, "antitone rho {}", r.value);
    // ranks x = [1, 2.5, 2.5, 4], y = [1, 3, 2, 4]; centred products sum to
    // 4.5, squares to 4.5 and 5
    let r = spearman_rho(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0])?;
    let want = 4.5 / (4.5f64 * 5.0).sqrt();
    ensure!((r.value - want).abs() <= 1e-12, "tie case rho {} vs {want}", r.value);

    let k0 = kendall_tau_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])?.value;
    let k1 = kendall_tau_distance(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0])?.value;
    let k3 = kendall_tau_distance(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])?.value;
    ensure!(k0 == 0.0 && k1 == 1.0 && (k3 - 1.0 / 3.0).abs() <= 1e-12, "kendall {k0} {k1} {k3}");

    let mut above = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let xs: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let ys: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        if spearman_rho(&xs, &ys)?.p_value.context("no p-value")? > 0.05 {
            above += 1;
        }
    }
    ensure!(above >= 90, "noise p > 0.05 in only {above}/100 seeds");
    Ok(format!("hand cases exact, noise p > 0.05 in {above}/100"))
}

/// 1-gram table `s{i} -> t{i}` with random counts and records whose target
/// log-prob is `2 * ln(pair/sx) + eps`.
fn synthetic_memorization(seed: u64, pairs: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut examples = Vec::new();
    let mut records = std::collections::HashMap::new();
    let template = PromptTemplate::default();
    for i in 0..pairs as u32 {
        let sx_count = rng.random_range(2..=50u64);
        let pair_count = rng.random_range(1..sx_count);
        let (src, tgt) = (format!("s{i}"), format!("t{i}"));
        entries.push(TableEntry {
            pair: NGramPair::new(gram(&src), gram(&tgt))?,
            similarity: 0.9,
            pair_count,
            sx_count,
        });
        let eps: f64 = rng.random_range(-0.01..=0.01);
        let lp = 2.0 * (pair_count as f64 / sx_count as f64).ln() + eps;
        let tokens: Vec<String> = ["Q", ":", &format!(" {src}"), "\n", "A", ":", &format!(" {tgt}")]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut offsets = Vec::new();
        let mut pos = 0;
        for t in &tokens {
            offsets.push(pos);
            pos += t.chars().count();
        }
        records.insert(
            i,
            TokenLogProbRecord {
                example_id: i,
                model_id: "synthetic".into(),
                logprobs: vec![-1.0, -1.0, -1.0, -1.0, -1.0, -1.0, lp.min(0.0)],
                tokens,
                offsets,
                template_digest: None,
            },
        );
        examples.push(TaskExample {
            example_id: i,
            input: src,
            output: tgt,
            score: None,
        });
    }
    entries.sort_by(|a, b| a.pair.cmp(&b.pair));
    let table = TaskGramTable {
        header: TableHeader {
            format_version: TABLE_FORMAT_VERSION,
            task_id: "synthetic".into(),
            n: 1,
            gamma: 0.75,
            provider_id: "none".into(),
            corpus_digest: "none".into(),
            whole_output_as_target: false,
        },
        entries,
    };
    let lm = TaskGramLM::new(table)?;
    let inputs = MemorizationInputs {
        lm: &lm,
        index: None,
        examples: &examples,
        records: &records,
        template: &template,
        tokenizer: &tok(),
    };
    let assembly: Assembly = assemble_observations(LmKind::Taskgram, &inputs)?;
    ensure!(assembly.observations.len() == pairs, "{} observations", assembly.observations.len());
    let res = distributional_memorization(LmKind::Taskgram, &assembly, PValueMethod::TApproximation)?;
    let rho = res.correlation.value;
    let p = res.correlation.p_value.context("no p-value")?;
    ensure!(rho >= 0.95 && p < 0.05, "seed {seed}: rho {rho}, p {p}");
    Ok(rho)
}

fn c3_memorization_recovery() -> Result<String> {
    let mut min_rho = f64::INFINITY;
    for seed in 0..50 {
        min_rho = min_rho.min(synthetic_memorization(seed, 50 + (seed as usize % 4) * 10)?);
    }
    Ok(format!("50 runs with 50..80 pairs, min rho {min_rho:.4}"))
}

fn c4_infgram_hand() -> Result<String> {
    // d0 the capital of france is paris .
    // d1 berlin is a capital of culture and the capital city of germany .
    // d2 paris is known for the eiffel tower .
    // d3 the river seine flows through the city .
    // d4 rome is the capital city of italy .        (N = 44)
    let store = CorpusStore::ingest(&root().join("data/toy/corpus.jsonl"), &tok())?;
    let idx = CorpusIndex::build(store, 8)?;
    ensure!(idx.total_tokens() == 44, "N = {}", idx.total_tokens());
    let cases: [(&str, &str, u64, u64); 5] = [
        ("the capital", "of", 1, 3),
        ("the capital", "city", 2, 3),
        ("visit the eiffel", "tower", 1, 1),
        ("zebra", "paris", 2, 44),
        ("is the capital", "of", 0, 1),
    ];
    for (ctx, t, num, den) in cases {
        let r = token_probability(&idx, &toks(ctx), t);
        ensure!(
            (r.numerator, r.denominator) == (num, den) && r.probability == num as f64 / den as f64,
            "P({t} | {ctx}) = {}/{}",
            r.numerator,
            r.denominator
        );
    }
    let none: Vec<String> = Vec::new();
    // "the" x6, followed by "capital" x3; then capital city 2/3; volcano unseen
    let s = span_probability(&idx, &none, &toks("the"), &toks("capital city volcano"), 0..3)?;
    let want = (3.0f64 / 6.0).ln() + (2.0f64 / 3.0).ln();
    ensure!(s.zero_tokens == 1, "zero tokens {}", s.zero_tokens);
    ensure!(s.log_prob == Some(want), "span log-prob {:?} vs {want}", s.log_prob);
    let z = span_probability(&idx, &none, &toks("q"), &toks("volcano lava"), 0..2)?;
    ensure!(z.log_prob.is_none() && z.zero_tokens == 2, "all-zero span not excluded");
    Ok("5 token ratios and 2 spans exact".into())
}

fn c5_table_invariants() -> Result<String> {
    let defaults = ThresholdTable::defaults();
    let want = [
        ("wmt", 2, 0.85),
        ("wmt", 3, 0.80),
        ("wmt", 4, 0.75),
        ("wmt", 5, 0.70),
        ("triviaqa", 3, 0.75),
        ("triviaqa", 5, 0.65),
        ("mmlu", 3, 0.75),
        ("mmlu", 5, 0.65),
    ];
    for (f, n, g) in want {
        ensure!(defaults.gamma(f, n) == Some(g), "threshold {f} n={n}: {:?}", defaults.gamma(f, n));
    }
    let listed: usize = defaults.families().map(|(_, m)| m.len()).sum();
    ensure!(listed == want.len(), "{listed} thresholds shipped");

    let data = root().join("data/pipeline");
    let idx = CorpusIndex::build(CorpusStore::ingest(&data.join("corpus.jsonl"), &tok())?, 8)?;
    let docs = store_docs(&idx);
    let examples = load_task_dataset(&data.join("task.jsonl"))?;
    let provider = HashProjectionEmbedder::new(256, 7);
    let mut total = 0;
    for n in [3usize, 5] {
        let gamma = defaults.gamma("triviaqa", n).unwrap();
        let table = mine(
            &examples,
            &idx,
            &provider,
            &mut EmbeddingCache::in_memory(),
            &MiningConfig::new("pipeline", n, gamma),
        )?;
        for e in &table.entries {
            let (sx, sy) = (e.pair.source.tokens(), e.pair.target.tokens());
            ensure!(e.similarity > gamma, "{}: sim {} <= {gamma}", e.pair, e.similarity);
            ensure!(sx != sy, "{}: identical sides", e.pair);
            ensure!(1 <= e.pair_count && e.pair_count <= e.sx_count, "{}: counts", e.pair);
            let a = provider.embed_one(&sx.join(" "));
            let b = provider.embed_one(&sy.join(" "));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
            let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            ensure!((dot / (norm(&a) * norm(&b)) - e.similarity).abs() < 1e-6, "{}: similarity", e.pair);
            let both = naive_docs(&docs, sx).iter().filter(|d| naive_docs(&docs, sy).contains(d)).count();
            ensure!(e.pair_count == both as u64, "{}: pair_count", e.pair);
            ensure!(e.sx_count == naive_count(&docs, sx), "{}: sx_count", e.pair);
        }
        total += table.len();
    }
    ensure!(total > 0, "mining produced no entries");
    Ok(format!("{total} entries (n=3,5) satisfy invariants; 8 default thresholds verbatim"))
}

fn c6_decontamination() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let docs: Vec<Vec<String>> = (0..40).map(|_| random_words(&mut rng, 40, 5000)).collect();
    let idx = build(&docs);
    let mut examples = Vec::new();
    for i in 0..40u32 {
        let fresh = |k: u32| format!("fresh{i}x{k}");
        let input: Vec<String> = if i < 20 {
            let d = &docs[rng.random_range(0..docs.len())];
            let s = rng.random_range(0..=d.len() - 8);
            (0..3).map(fresh).chain(d[s..s + 8].iter().cloned()).chain((3..6).map(fresh)).collect()
        } else {
            let d = &docs[rng.random_range(0..docs.len())];
            let (a, b) = (rng.random_range(0..=d.len() - 7), rng.random_range(0..=d.len() - 7));
            d[a..a + 7].iter().cloned().chain([fresh(0)]).chain(d[b..b + 7].iter().cloned()).collect()
        };
        let shared_max = (1..=input.len())
            .filter(|&n| input.windows(n).any(|w| naive_count(&docs, w) > 0))
            .max()
            .unwrap_or(0);
        ensure!((i < 20 && shared_max >= 8) || (i >= 20 && shared_max == 7), "example {i} shares {shared_max}");
        examples.push(TaskExample {
            example_id: i,
            input: input.join(" "),
            output: format!("answer{i}"),
            score: None,
        });
    }
    let rep = decontaminate(&idx, &examples, &[8, 14], &tok());
    let planted = rep.examples[..20].iter().filter(|e| e.contaminated).count();
    let clean = rep.examples[20..].iter().filter(|e| e.contaminated).count();
    ensure!(planted == 20 && clean == 0, "planted flagged {planted}/20, clean flagged {clean}/20");
    Ok("20/20 planted flagged, 0/20 clean flagged".into())
}

fn c7_influence() -> Result<String> {
    let pairs = [
        NGramPair::new(gram("capital of"), gram("paris"))?,
        NGramPair::new(gram("river"), gram("seine"))?,
    ];
    let ckpts = vec!["step100".to_owned(), "step200".to_owned()];
    let dir = tempfile::tempdir()?;
    let dumps = GradientDumps::create(dir.path(), ckpts.clone(), 3)?;
    // [checkpoint][span] train / test vectors
    let train = [[[1.0, 2.0, 0.5], [0.0, -1.0, 4.0]], [[3.0, 0.0, -2.0], [1.5, 1.0, 1.0]]];
    let test = [[[2.0, 1.0, 4.0], [1.0, 1.0, 0.25]], [[-1.0, 5.0, 0.5], [2.0, -2.0, 8.0]]];
    for c in 0..2 {
        for s in 0..2 {
            dumps.write(c, GradKind::Train, 4, &pairs[s].target, &train[c][s])?;
            dumps.write(c, GradKind::Test, 9, &pairs[s].target, &test[c][s])?;
        }
    }
    // ck0: (2 + 2 + 2) + (0 - 1 + 1) = 6; ck1: (-3 + 0 - 1) + (3 - 2 + 8) = 5
    let dumps = GradientDumps::open(dir.path())?;
    let rec = influence_pairwise(&dumps, 4, 9, &pairs)?;
    ensure!(rec.per_checkpoint == vec![6.0, 5.0] && rec.accumulated == 11.0, "dumps gave {rec:?}");

    // bilinearity: scaling one train gradient by 3, and adding two of them
    let mut scaled = InMemoryGradients::new(ckpts.clone(), 3);
    let mut sum = InMemoryGradients::new(ckpts.clone(), 3);
    let mut part = InMemoryGradients::new(ckpts.clone(), 3);
    let extra = [0.5f32, -4.0, 2.0];
    for c in 0..2 {
        for s in 0..2 {
            let t = pairs[s].target.clone();
            let tr: Vec<f32> = train[c][s].to_vec();
            scaled.insert(c, GradKind::Train, 4, t.clone(), tr.iter().map(|x| 3.0 * x).collect());
            sum.insert(c, GradKind::Train, 4, t.clone(), tr.iter().zip(extra).map(|(a, b)| a + b).collect());
            part.insert(c, GradKind::Train, 4, t.clone(), extra.to_vec());
            for m in [&mut scaled, &mut sum, &mut part] {
                m.insert(c, GradKind::Test, 9, t.clone(), test[c][s].to_vec());
            }
        }
    }
    let r3 = influence_pairwise(&scaled, 4, 9, &pairs)?.accumulated;
    let rs = influence_pairwise(&sum, 4, 9, &pairs)?.accumulated;
    let rp = influence_pairwise(&part, 4, 9, &pairs)?.accumulated;
    ensure!(r3 == 3.0 * 11.0, "scaled influence {r3}");
    ensure!(rs == 11.0 + rp, "additivity {rs} vs {}", 11.0 + rp);

    // sampling: 12 documents hold the pair, R = 5
    let texts: Vec<String> = (0..12).map(|i| format!("word{i} alpha beta")).chain(["gamma only".into()]).collect();
    let idx = CorpusIndex::build(CorpusStore::from_texts("inf", &texts, &tok())?, 8)?;
    let pair = NGramPair::new(gram("alpha"), gram("beta"))?;
    let table = TaskGramTable {
        header: TableHeader {
            format_version: TABLE_FORMAT_VERSION,
            task_id: "inf".into(),
            n: 1,
            gamma: 0.75,
            provider_id: "none".into(),
            corpus_digest: idx.store().manifest().source_digest.clone(),
            whole_output_as_target: false,
        },
        entries: vec![TableEntry {
            pair: pair.clone(),
            similarity: 0.9,
            pair_count: 12,
            sx_count: 12,
        }],
    };
    let lm = TaskGramLM::new(table)?;
    let mut grads = InMemoryGradients::new(vec!["c".into()], 1);
    for d in 0..12u32 {
        grads.insert(0, GradKind::Train, d, pair.target.clone(), vec![d as f32]);
    }
    grads.insert(0, GradKind::Test, 0, pair.target.clone(), vec![1.0]);
    let examples = vec![TaskExample {
        example_id: 0,
        input: "alpha".into(),
        output: "beta".into(),
        score: None,
    }];
    let inputs = InfluenceInputs {
        grads: &grads,
        index: &idx,
        lm: &lm,
        examples: &examples,
        tokenizer: &tok(),
    };
    let a = influence_average(&inputs, RetrievalScheme::Pair, 5, 42)?;
    let b = influence_average(&inputs, RetrievalScheme::Pair, 5, 42)?;
    ensure!(a == b, "same seed, different result");
    let mut want: Vec<u32> =
        rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(42), 12, 5).into_iter().map(|i| i as u32).collect();
    want.sort_unstable();
    let got: Vec<u32> = a.records.iter().map(|r| r.doc_id).collect();
    ensure!(got == want, "sampled {got:?}, expected {want:?}");
    let mean = want.iter().map(|&d| d as f64).sum::<f64>() / 5.0;
    ensure!(a.value == Some(mean), "value {:?} vs {mean}", a.value);
    let differs = (0..20u64).any(|s| {
        influence_average(&inputs, RetrievalScheme::Pair, 5, s).map(|o| o.records).ok() != Some(a.records.clone())
    });
    ensure!(differs, "seed has no effect on sampling");

    // shortfall: only 3 documents contain the target
    let texts: Vec<String> = ["x1 rare", "x2 rare", "x3 rare", "x4 other"].iter().map(|s| s.to_string()).collect();
    let idx = CorpusIndex::build(CorpusStore::from_texts("short", &texts, &tok())?, 8)?;
    let rare = NGramPair::new(gram("x1"), gram("rare"))?;
    let lm = TaskGramLM::new(TaskGramTable {
        header: lm.table().header.clone(),
        entries: vec![TableEntry {
            pair: rare.clone(),
            similarity: 0.9,
            pair_count: 1,
            sx_count: 1,
        }],
    })?;
    let mut grads = InMemoryGradients::new(vec!["c".into()], 1);
    for d in 0..3u32 {
        grads.insert(0, GradKind::Train, d, rare.target.clone(), vec![2.0]);
    }
    grads.insert(0, GradKind::Test, 0, rare.target.clone(), vec![1.5]);
    let examples = vec![TaskExample {
        example_id: 0,
        input: "x1".into(),
        output: "rare".into(),
        score: None,
    }];
    let inputs = InfluenceInputs {
        grads: &grads,
        index: &idx,
        lm: &lm,
        examples: &examples,
        tokenizer: &tok(),
    };
    let s = influence_average(&inputs, RetrievalScheme::TargetOnly, 50, 1)?;
    ensure!(
        s.shortfalls.len() == 1 && s.shortfalls[0].available == 3 && s.shortfalls[0].requested == 50,
        "shortfall {:?}",
        s.shortfalls
    );
    ensure!(s.records.len() == 3 && s.value == Some(3.0), "shortfall value {:?}", s.value);
    Ok("dumps sum to 6 + 5 = 11; scale x3 and additivity exact; seeded sample reproduced; shortfall 3/50".into())
}

fn c8_prompt_opt() -> Result<String> {
    let data = root().join("data/pipeline");
    let idx = CorpusIndex::build(CorpusStore::ingest(&data.join("corpus.jsonl"), &tok())?, 8)?;
    let docs = store_docs(&idx);
    let examples = load_task_dataset(&data.join("task.jsonl"))?;
    let candidates: Vec<String> = std::fs::read_to_string(data.join("prompt_candidates.txt"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .chain(["The capital of the country is the capital city of the country.".to_owned()])
        .collect();
    let naive_reward = |p: &str| -> f64 {
        let t = toks(p);
        if t.len() < 3 {
            return 0.0;
        }
        let w: Vec<&[String]> = t.windows(3).collect();
        w.iter().map(|w| naive_count(&docs, w)).sum::<u64>() as f64 / w.len() as f64
    };
    let mut summary = Vec::new();
    for objective in [Objective::Maximize, Objective::Minimize] {
        let mut mock = MockRewriter::new(candidates.clone());
        let trace = optimize(&mut mock, &idx, &examples, "Answer the following question.", &OptimizeConfig::new(objective, 5))?;
        ensure!(trace.best_so_far.len() == 6, "{} best-so-far entries", trace.best_so_far.len());
        let better = |a: f64, b: f64| if objective == Objective::Maximize { a >= b } else { a <= b };
        for w in trace.best_so_far.windows(2) {
            ensure!(better(w[1].reward, w[0].reward), "{objective:?}: best-so-far not monotone");
        }
        for c in &trace.candidates {
            ensure!(c.reward == naive_reward(&c.text), "reward of {:?}: {} vs {}", c.text, c.reward, naive_reward(&c.text));
        }
        // replay the trace file
        let mut by_iter = BTreeMap::new();
        for line in trace.to_jsonl()?.lines() {
            let v: serde_json::Value = serde_json::from_str(line)?;
            if v["kind"] == "candidate" {
                let text = v["text"].as_str().context("text")?;
                ensure!(v["reward"].as_f64() == Some(naive_reward(text)), "trace reward of {text:?}");
                by_iter.insert(v["iteration"].as_u64().context("iteration")?, naive_reward(text));
            }
        }
        for b in &trace.best_so_far {
            let seen = by_iter.range(..=b.iteration as u64).map(|(_, r)| *r);
            let want = if objective == Objective::Maximize {
                seen.fold(f64::NEG_INFINITY, f64::max)
            } else {
                seen.fold(f64::INFINITY, f64::min)
            };
            ensure!(b.reward == want, "best at {} is {}, expected {want}", b.iteration, b.reward);
        }
        summary.push(format!("{objective:?} best {:.2}", trace.best().reward));
    }
    Ok(summary.join(", "))
}

fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn c9_pipeline() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let out = tmp.path().join("toy");
    let mut runs = Vec::new();
    let start = Instant::now();
    for _ in 0..2 {
        if out.exists() {
            std::fs::remove_dir_all(&out)?;
        }
        let t = Instant::now();
        let status = Command::new("bash")
            .arg(root().join("scripts/toy_pipeline.sh"))
            .arg(&out)
            .env("MEMTRACE", env!("CARGO_BIN_EXE_memtrace"))
            .stdout(std::process::Stdio::null())
            .status()?;
        ensure!(status.success(), "pipeline exited with {status}");
        ensure!(t.elapsed() < Duration::from_secs(300), "run took {:?}", t.elapsed());
        runs.push(snapshot(&out)?);
    }
    for f in [
        "table.jsonl",
        "mass.jsonl",
        "infgram.jsonl",
        "aligned.jsonl",
        "memorization_taskgram.json",
        "memorization_infgram.json",
        "novelty.json",
        "decontam.json",
        "bins.csv",
        "prompt_opt.trace.jsonl",
        "best_prompt.txt",
        "report.json",
        "report.csv",
    ] {
        ensure!(runs[0].contains_key(Path::new(f)), "missing artifact {f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&runs[0][Path::new("report.json")])?;
    ensure!(report["entries"]["memorization_taskgram"]["result"]["rho"].is_number(), "report lacks rho");
    if runs[0] != runs[1] {
        let diff: Vec<_> = runs[0]
            .keys()
            .chain(runs[1].keys())
            .filter(|k| runs[0].get(*k) != runs[1].get(*k))
            .collect();
        bail!("runs differ in {diff:?}");
    }
    Ok(format!("{} files byte-identical across 2 runs, {:.1}s total", runs[0].len(), start.elapsed().as_secs_f64()))
}

fn c10_rank_invariance() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for trial in 0..1000 {
        let n = rng.random_range(3..40);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-20..=20) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-20..=20) as f64).collect();
        let f: fn(f64) -> f64 = match trial % 3 {
            0 => |x| x.exp(),
            1 => |x| 2.5 * x + 7.0,
            _ => |x| x * x * x,
        };
        let fx: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let fy: Vec<f64> = ys.iter().map(|&y| f(y)).collect();
        for (a, b) in [(&fx, &ys), (&xs, &fy), (&fx, &fy)] {
            ensure!(spearman_rho(&xs, &ys).ok() == spearman_rho(a, b).ok(), "trial {trial}: spearman changed");
            ensure!(
                kendall_tau_distance(&xs, &ys).ok() == kendall_tau_distance(a, b).ok(),
                "trial {trial}: kendall changed"
            );
        }
    }
    Ok("1000 trials, exp / affine / cube on x, y and both".into())
}

type Criterion = (u32, &'static str, fn() -> Result<String>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "count oracle equivalence", c1_count_oracle),
        (2, "statistics references", c2_stats_references),
        (3, "synthetic memorization recovery", c3_memorization_recovery),
        (4, "infgram hand check", c4_infgram_hand),
        (5, "table invariants", c5_table_invariants),
        (6, "decontamination", c6_decontamination),
        (7, "influence", c7_influence),
        (8, "prompt optimizer loop", c8_prompt_opt),
        (9, "end-to-end toy pipeline", c9_pipeline),
        (10, "rank invariance", c10_rank_invariance),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err(anyhow::anyhow!("panicked")));
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
