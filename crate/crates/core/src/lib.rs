//! Exact n-gram corpus indexing and memorization analysis.
//!
//! The pipeline runs corpus store → index → task-gram mining → n-gram LMs →
//! alignment with external LLM log-probabilities → rank statistics.

pub mod analysis;
pub mod bridge;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod http;
pub mod index;
pub mod infgram;
pub mod miner;
pub mod ngram;
pub mod prompt_opt;
pub mod suffix_array;
pub mod taskgram_lm;
mod util;

pub use bridge::{PromptTemplate, RenderedPrompt, TokenLogProbRecord};
pub use corpus::{
    load_task_dataset, tokenize, CorpusManifest, CorpusStore, Document, TaskExample, TokenizedDocument,
    TokenizerConfig,
};
pub use embedding::{EmbeddingCache, EmbeddingProvider, HashProjectionEmbedder};
pub use error::{Error, Result};
pub use index::{CorpusIndex, SuffixMatch};
pub use infgram::{span_probability, token_probability, BackoffResult, SpanProbability};
pub use miner::{MiningConfig, TaskGramTable, ThresholdTable};
pub use ngram::{NGram, NGramPair};
pub use prompt_opt::{optimize, reward, Objective, OptimizationTrace, PromptCandidate};
pub use taskgram_lm::TaskGramLM;
pub use util::sha256_hex;
