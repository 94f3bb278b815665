//! Novel n-gram pairs: similarity-filtered input/output pairs in generated
//! text that never co-occur in any corpus document.

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenizerConfig};
use crate::embedding::{BatchOptions, EmbeddingCache, EmbeddingProvider};
use crate::error::Result;
use crate::index::CorpusIndex;
use crate::miner::{embed_candidates, example_candidates, filter_by_similarity, DEFAULT_CANDIDATE_CAP};
use crate::ngram::NGramPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub example_id: u32,
    pub input: String,
    pub generated: String,
}

#[derive(Clone, Debug)]
pub struct NoveltyConfig {
    pub n: usize,
    pub gamma: f64,
    pub candidate_cap: usize,
    pub batch: BatchOptions,
}

impl NoveltyConfig {
    pub fn new(n: usize, gamma: f64) -> Self {
        NoveltyConfig {
            n,
            gamma,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            batch: BatchOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleNovelty {
    pub example_id: u32,
    /// Distinct pairs passing the similarity filter.
    pub similar_pairs: usize,
    pub novel_pairs: usize,
    pub novel: Vec<NGramPair>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NoveltyReport {
    pub per_example: Vec<ExampleNovelty>,
    pub total_similar: usize,
    pub total_novel: usize,
}

pub fn novelty_count(
    index: &CorpusIndex,
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
    config: &NoveltyConfig,
    tokenizer: &TokenizerConfig,
    generations: &[Generation],
) -> Result<NoveltyReport> {
    let mut report = NoveltyReport::default();
    for g in generations {
        let mut cands = example_candidates(
            g.example_id,
            &tokenize(&g.input, tokenizer),
            &tokenize(&g.generated, tokenizer),
            config.n,
            false,
            config.candidate_cap,
        );
        embed_candidates(&mut cands, provider, cache, config.batch)?;
        let similar: Vec<NGramPair> = filter_by_similarity(cands, config.gamma)?
            .into_iter()
            .filter_map(|c| NGramPair::new(c.source, c.target).ok())
            .collect();
        let novel: Vec<NGramPair> = similar
            .iter()
            .filter(|p| index.count_pair_cooccurrence_any(p) == 0)
            .cloned()
            .collect();
        report.total_similar += similar.len();
        report.total_novel += novel.len();
        report.per_example.push(ExampleNovelty {
            example_id: g.example_id,
            similar_pairs: similar.len(),
            novel_pairs: novel.len(),
            novel,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusStore;
    use crate::embedding::ConstantEmbedder;

    fn index() -> CorpusIndex {
        let docs = ["the capital of france is paris .", "rome is in italy ."];
        CorpusIndex::build(CorpusStore::from_texts("t", &docs, &TokenizerConfig::default()).unwrap(), 4).unwrap()
    }

    fn gen(input: &str, generated: &str) -> Generation {
        Generation {
            example_id: 0,
            input: input.into(),
            generated: generated.into(),
        }
    }

    #[test]
    fn copied_text_has_no_novel_pairs() {
        let idx = index();
        let r = novelty_count(
            &idx,
            &ConstantEmbedder,
            &mut EmbeddingCache::in_memory(),
            &NoveltyConfig::new(2, 0.5),
            &TokenizerConfig::default(),
            &[gen("the capital of france", "france is paris .")],
        )
        .unwrap();
        assert!(r.total_similar > 0);
        assert_eq!(r.total_novel, 0);
    }

    #[test]
    fn gibberish_pairs_are_all_novel() {
        let idx = index();
        let r = novelty_count(
            &idx,
            &ConstantEmbedder,
            &mut EmbeddingCache::in_memory(),
            &NoveltyConfig::new(1, 0.5),
            &TokenizerConfig::default(),
            &[gen("capital paris", "blorp zzyx")],
        )
        .unwrap();
        assert_eq!(r.total_similar, 4);
        assert_eq!(r.total_novel, 4);
    }
}
