//! Text embedding providers and the per-provider embedding cache.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::EndpointConfig;
use crate::util::{for_each_jsonl_line, open_append};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub provider_id: String,
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier; cache entries are keyed by it.
    fn provider_id(&self) -> &str;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Cosine similarity in `f64`. Zero vectors have similarity 0 with anything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix finalizer to spread low-entropy keys
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic local embedder: character n-gram counts pushed through a
/// seeded signed random projection, then L2-normalized. Strings sharing many
/// character n-grams land close together.
#[derive(Clone, Debug)]
pub struct HashProjectionEmbedder {
    id: String,
    dim: usize,
    seed: u64,
    char_n: usize,
}

impl HashProjectionEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashProjectionEmbedder {
            id: format!("hash-projection/d{dim}/s{seed}"),
            dim: dim.max(1),
            seed,
            char_n: 3,
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let padded: Vec<char> = format!(" {text} ").chars().collect();
        let n = self.char_n.min(padded.len());
        let mut buf = String::new();
        for w in padded.windows(n) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(self.seed, buf.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            v[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashProjectionEmbedder {
    fn default() -> Self {
        Self::new(256, 0)
    }
}

impl EmbeddingProvider for HashProjectionEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Maps every text to the same unit vector, so every pair has similarity 1.
#[derive(Clone, Debug, Default)]
pub struct ConstantEmbedder;

impl EmbeddingProvider for ConstantEmbedder {
    fn provider_id(&self) -> &str {
        "constant"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(vec![vec![1.0, 0.0]; texts.len()])
    }
}

/// Client for a minimal embed endpoint: `{"texts": [...]}` answered by
/// `{"vectors": [[...], ...]}`.
#[derive(Clone, Debug)]
pub struct HttpEmbedder {
    id: String,
    endpoint: EndpointConfig,
}

impl HttpEmbedder {
    pub fn new(provider_id: impl Into<String>, endpoint: EndpointConfig) -> Self {
        HttpEmbedder {
            id: provider_id.into(),
            endpoint,
        }
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let reply = self.endpoint.post_json(&json!({ "texts": texts }))?;
        let resp: EmbedResponse = serde_json::from_value(reply)
            .map_err(|e| Error::Format(format!("bad embed response: {e}")))?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Format(format!(
                "embed endpoint returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        Ok(resp.vectors)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    provider: String,
    text: String,
    vector: Vec<f32>,
}

/// Embeddings keyed by `(provider_id, text)`, optionally persisted as an
/// append-only JSONL file.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: HashMap<(String, String), Vec<f32>>,
    path: Option<PathBuf>,
    hits: usize,
    misses: usize,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a persisted cache at `path`.
    pub fn open(path: &Path) -> Result<Self> {
        let mut cache = EmbeddingCache {
            path: Some(path.to_owned()),
            ..Default::default()
        };
        if path.exists() {
            for_each_jsonl_line(path, |_, line| {
                let l: CacheLine = serde_json::from_str(line)?;
                cache.entries.insert((l.provider, l.text), l.vector);
                Ok(())
            })?;
        }
        Ok(cache)
    }

    pub fn get(&self, provider_id: &str, text: &str) -> Option<&Vec<f32>> {
        self.entries.get(&(provider_id.to_owned(), text.to_owned()))
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn insert_all(&mut self, provider_id: &str, items: Vec<(String, Vec<f32>)>) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = open_append(path)?;
            for (text, vector) in &items {
                let line = serde_json::to_string(&CacheLine {
                    provider: provider_id.to_owned(),
                    text: text.clone(),
                    vector: vector.clone(),
                })?;
                writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
            }
        }
        for (text, vector) in items {
            self.entries.insert((provider_id.to_owned(), text), vector);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// Maximum number of provider calls in flight at once.
    pub max_in_flight: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            batch_size: 256,
            max_in_flight: 4,
        }
    }
}

/// Embeds `texts` through the cache; only uncached texts reach the provider.
pub fn embed_batch(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
    opts: BatchOptions,
) -> Result<Vec<EmbeddingVector>> {
    let pid = provider.provider_id().to_owned();
    let mut missing: Vec<String> = texts
        .iter()
        .filter(|t| cache.get(&pid, t).is_none())
        .cloned()
        .collect();
    missing.sort();
    missing.dedup();
    cache.hits += texts.len() - texts.iter().filter(|t| missing.binary_search(t).is_ok()).count();
    cache.misses += missing.len();

    let batches: Vec<&[String]> = missing.chunks(opts.batch_size.max(1)).collect();
    for window in batches.chunks(opts.max_in_flight.max(1)) {
        let results: Vec<Result<Vec<Vec<f32>>>> = std::thread::scope(|s| {
            let handles: Vec<_> = window
                .iter()
                .map(|batch| s.spawn(move || provider.embed(batch)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("embedding worker panicked"))
                .collect()
        });
        for (batch, res) in window.iter().zip(results) {
            let vectors = res?;
            if vectors.len() != batch.len() {
                return Err(Error::Format(format!(
                    "provider returned {} vectors for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            cache.insert_all(&pid, batch.iter().cloned().zip(vectors).collect())?;
        }
    }

    let mut out = Vec::with_capacity(texts.len());
    let mut dim = None;
    for t in texts {
        let values = cache.get(&pid, t).expect("embedded above").clone();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite embedding for {t:?}")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Dimension {
                    expected: d,
                    actual: values.len(),
                })
            }
            _ => {}
        }
        out.push(EmbeddingVector {
            values,
            provider_id: pid.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hash_embedder_is_deterministic_and_self_similar() {
        let e = HashProjectionEmbedder::default();
        let a = e.embed_one("capital of france");
        assert_eq!(a, e.embed_one("capital of france"));
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-9);
        let near = cosine(&a, &e.embed_one("capital of spain"));
        let far = cosine(&a, &e.embed_one("zygote quokka"));
        assert!(near > far, "near {near} far {far}");
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[-2.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_preserves_order_and_uses_cache() {
        let e = HashProjectionEmbedder::new(32, 7);
        let mut cache = EmbeddingCache::in_memory();
        let texts = s(&["a", "b", "c"]);
        let out = embed_batch(&texts, &e, &mut cache, BatchOptions { batch_size: 2, max_in_flight: 2 }).unwrap();
        assert_eq!(out.len(), 3);
        for (t, v) in texts.iter().zip(&out) {
            assert_eq!(v.values, e.embed_one(t));
        }
        assert_eq!(cache.misses(), 3);
        let again = embed_batch(&s(&["b", "b"]), &e, &mut cache, BatchOptions::default()).unwrap();
        assert_eq!(again[0], again[1]);
        assert_eq!((cache.hits(), cache.misses()), (2, 3));
    }

    #[test]
    fn cache_is_keyed_by_provider_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let a = HashProjectionEmbedder::new(16, 1);
        let b = HashProjectionEmbedder::new(16, 2);
        {
            let mut cache = EmbeddingCache::open(&path).unwrap();
            embed_batch(&s(&["x"]), &a, &mut cache, BatchOptions::default()).unwrap();
            let vb = embed_batch(&s(&["x"]), &b, &mut cache, BatchOptions::default()).unwrap();
            assert_eq!(vb[0].values, b.embed_one("x"));
            assert_eq!(cache.misses(), 2);
        }
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get(a.provider_id(), "x").unwrap(), &a.embed_one("x"));
    }

    #[test]
    fn http_embedder_round_trip_and_dimension_check() {
        let server = testing::serve(2, |i, req| {
            let n = req["texts"].as_array().unwrap().len();
            let vectors: Vec<Vec<f32>> = (0..n).map(|k| vec![k as f32 + 1.0; if i == 0 { 2 } else { 3 }]).collect();
            (200, serde_json::json!({ "vectors": vectors }))
        });
        let e = HttpEmbedder::new("remote", EndpointConfig::new(&server.url));
        let mut cache = EmbeddingCache::in_memory();
        let opts = BatchOptions { batch_size: 8, max_in_flight: 1 };
        let v = embed_batch(&s(&["p", "q"]), &e, &mut cache, opts).unwrap();
        assert_eq!(v[0].values, [1.0, 1.0]);
        assert_eq!(server.requests.lock().unwrap()[0]["texts"], serde_json::json!(["p", "q"]));
        // second call returns 3-d vectors: mixing with cached 2-d ones fails
        let err = embed_batch(&s(&["p", "r"]), &e, &mut cache, opts).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 2, actual: 3 }));
    }
}
