//! Hand-computed values on the bundled five-document corpus.
//!
//! Tokens per document: 7, 13, 8, 8, 8 (N = 44).
//!   d0  the capital of france is paris .
//!   d1  berlin is a capital of culture and the capital city of germany .
//!   d2  paris is known for the eiffel tower .
//!   d3  the river seine flows through the city .
//!   d4  rome is the capital city of italy .

use std::path::PathBuf;

use memtrace_core::index::CorpusIndex;
use memtrace_core::infgram::{span_probability, token_probability};
use memtrace_core::{tokenize, CorpusStore, NGram, NGramPair, TokenizerConfig};

fn toy() -> CorpusIndex {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/corpus.jsonl");
    CorpusIndex::build(CorpusStore::ingest(&path, &TokenizerConfig::default()).unwrap(), 8).unwrap()
}

fn g(s: &str) -> NGram {
    NGram::from_text(s, &TokenizerConfig::default()).unwrap()
}

fn t(s: &str) -> Vec<String> {
    tokenize(s, &TokenizerConfig::default())
}

#[test]
fn manifest_counts() {
    let idx = toy();
    let m = idx.store().manifest();
    assert_eq!(m.document_count, 5);
    assert_eq!(m.token_count, 44);
}

#[test]
fn counts() {
    let idx = toy();
    assert_eq!(idx.count_occurrences(&g("capital of")), 2); // d0, d1
    assert_eq!(idx.count_occurrences(&g("the capital")), 3); // d0, d1, d4
    assert_eq!(idx.count_occurrences(&g("the capital of")), 1); // d0
    assert_eq!(idx.count_occurrences(&g("capital")), 4);
    assert_eq!(idx.doc_frequency(&g("capital")).unwrap(), 3);
    assert_eq!(idx.documents_containing(&g("paris")).unwrap(), vec![0, 2]);
    let p = NGramPair::new(g("capital of france"), g("paris")).unwrap();
    assert_eq!(idx.count_pair_cooccurrence(&p).unwrap(), 1);
}

#[test]
fn backoff_ratios() {
    let idx = toy();
    // "the capital" x3, followed by "of" once
    let r = token_probability(&idx, &t("the capital"), "of");
    assert_eq!((r.numerator, r.denominator, r.n_i()), (1, 3, 3));
    assert_eq!(r.probability, 1.0 / 3.0);
    // "visit" unseen: backs off to "the eiffel" (x1), always followed by "tower"
    let r = token_probability(&idx, &t("visit the eiffel"), "tower");
    assert_eq!((r.probability, r.n_i()), (1.0, 3));
    // nothing matches: unigram count of "paris" over N
    let r = token_probability(&idx, &t("zebra"), "paris");
    assert_eq!((r.numerator, r.denominator, r.n_i()), (2, 44, 1));
    // "is the capital" (d4) is seen but continues with "city", not "of"
    let r = token_probability(&idx, &t("is the capital"), "of");
    assert_eq!((r.matched_prefix_len, r.denominator, r.numerator), (3, 1, 0));
}

#[test]
fn zero_tokens_are_ignored_in_spans() {
    let idx = toy();
    let none: Vec<String> = Vec::new();
    // "city" after "the capital": "the capital city" x2 / "the capital" x3;
    // "volcano" never occurs and is skipped
    let s = span_probability(&idx, &none, &t("the"), &t("capital city volcano"), 1..3).unwrap();
    assert_eq!(s.zero_tokens, 1);
    assert_eq!(s.log_prob, Some((2.0f64 / 3.0).ln()));
    let all_zero = span_probability(&idx, &none, &t("q"), &t("volcano lava"), 0..2).unwrap();
    assert_eq!(all_zero.log_prob, None);
}
