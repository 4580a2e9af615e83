use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::bertscore::{norm, EmbeddingMatrix};
use super::rouge::TokenSeq;
use crate::digest::sha256_hex;
use crate::llm_client::{ClientError, HttpEndpoint, ResponseCache, RetryPolicy};

pub const EMBEDDINGS_PATH: &str = "/v1/embeddings";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedding provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("embedding dimension {got} differs from {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero embedding for token {0:?}")]
    ZeroVector(String),
    #[error("unexpected embedding response: {0}")]
    Schema(String),
    #[error("embedding table: {0}")]
    Table(String),
    #[error("embedding cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvidedVector {
    pub values: Vec<f64>,
    /// True when the provider had no entry and returned the hashed fallback.
    pub fallback: bool,
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier used in cache keys and reports.
    fn id(&self) -> String;

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<ProvidedVector>, EmbedError>;
}

/// Deterministic pseudo-random unit vector derived from the token text.
pub fn hashed_unit_vector(token: &str, dim: usize) -> Vec<f64> {
    let digest = sha256_hex(format!("finfuse-hash-embedding:{token}").as_bytes());
    let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Static token → vector table. Unknown tokens get [`hashed_unit_vector`] and
/// are flagged as fallbacks; with an empty table this is a pure hash provider.
#[derive(Debug, Clone)]
pub struct LookupProvider {
    name: String,
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl LookupProvider {
    pub fn hashing(dim: usize) -> Self {
        Self {
            name: format!("hash-{dim}"),
            dim,
            table: HashMap::new(),
        }
    }

    pub fn from_table(
        name: impl Into<String>,
        table: HashMap<String, Vec<f64>>,
    ) -> Result<Self, EmbedError> {
        let dim = table.values().next().map_or(0, Vec::len);
        if dim == 0 {
            return Err(EmbedError::Table("empty table".into()));
        }
        for v in table.values() {
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            table,
        })
    }

    /// Whitespace-separated text: `token v1 v2 ... vd` per line.
    pub fn load_text(path: &Path) -> Result<Self, EmbedError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EmbedError::Table(format!("{}: {e}", path.display())))?;
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let values =
                values.map_err(|e| EmbedError::Table(format!("line {}: {e}", i + 1)))?;
            table.insert(token.to_lowercase(), values);
        }
        let name = format!(
            "table:{}",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        );
        Self::from_table(name, table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl EmbeddingProvider for LookupProvider {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<ProvidedVector>, EmbedError> {
        Ok(tokens
            .iter()
            .map(|t| match self.table.get(t) {
                Some(v) => ProvidedVector {
                    values: v.clone(),
                    fallback: false,
                },
                None => ProvidedVector {
                    values: hashed_unit_vector(t, self.dim),
                    fallback: true,
                },
            })
            .collect())
    }
}

/// `POST {base}/v1/embeddings` with `{model, input: [tokens]}`, reading
/// `data[i].embedding`.
pub struct HttpEmbeddingProvider {
    endpoint: HttpEndpoint,
    model: String,
    policy: RetryPolicy,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>, policy: RetryPolicy) -> Self {
        Self {
            endpoint,
            model: model.into(),
            policy,
        }
    }

    pub fn network_calls(&self) -> u64 {
        self.endpoint.network_calls()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<ProvidedVector>, EmbedError> {
        let body = json!({"model": self.model, "input": tokens});
        let (resp, _) = self
            .endpoint
            .post_json(EMBEDDINGS_PATH, &body, &self.policy)
            .map_err(|e| match e {
                ClientError::ResponseSchemaError(m) => EmbedError::Schema(m),
                other => EmbedError::ProviderUnreachable(other.to_string()),
            })?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Schema("missing data".into()))?;
        if data.len() != tokens.len() {
            return Err(EmbedError::Schema(format!(
                "{} embeddings for {} inputs",
                data.len(),
                tokens.len()
            )));
        }
        data.iter()
            .map(|d| {
                let values = d
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| EmbedError::Schema("missing embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| EmbedError::Schema("non-numeric".into())))
                    .collect::<Result<Vec<f64>, _>>()?;
                Ok(ProvidedVector {
                    values,
                    fallback: false,
                })
            })
            .collect()
    }
}

/// Token embeddings for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub matrix: EmbeddingMatrix,
    /// Tokens that received the hashed fallback vector.
    pub n_fallback: usize,
}

/// Wraps a provider with a per-token memo and an optional persistent cache
/// keyed by (provider id, token). Vectors are unit-normalized on the way out.
pub struct Embedder {
    provider: Box<dyn EmbeddingProvider>,
    memo: Mutex<HashMap<String, ProvidedVector>>,
    cache: Option<Arc<ResponseCache>>,
    batch_size: usize,
}

impl Embedder {
    pub fn new(provider: Box<dyn EmbeddingProvider>) -> Self {
        Self {
            provider,
            memo: Mutex::new(HashMap::new()),
            cache: None,
            batch_size: 256,
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn provider_id(&self) -> String {
        self.provider.id()
    }

    fn cache_key(&self, token: &str) -> String {
        sha256_hex(
            serde_json::to_vec(&json!({"provider": self.provider.id(), "token": token}))
                .expect("key serializes")
                .as_slice(),
        )
    }

    /// Resolves every token not yet memoized, querying the provider in
    /// batches with at most `max_in_flight` concurrent batches.
    pub fn prefetch(&self, tokens: &[String], max_in_flight: usize) -> Result<(), EmbedError> {
        let mut missing: Vec<String> = {
            let memo = self.memo.lock().unwrap();
            tokens.iter().filter(|t| !memo.contains_key(*t)).cloned().collect()
        };
        missing.sort();
        missing.dedup();
        if let Some(cache) = &self.cache {
            let mut memo = self.memo.lock().unwrap();
            missing.retain(|t| match cache.get(&self.cache_key(t)) {
                Some(v) => match serde_json::from_value::<ProvidedVector>(v) {
                    Ok(pv) => {
                        memo.insert(t.clone(), pv);
                        false
                    }
                    Err(_) => true,
                },
                None => true,
            });
        }
        let batches: Vec<&[String]> = missing.chunks(self.batch_size.max(1)).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let first_error: Mutex<Option<EmbedError>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..max_in_flight.max(1).min(batches.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    let Some(batch) = batches.get(i) else { break };
                    match self.fetch(batch) {
                        Ok(()) => {}
                        Err(e) => {
                            first_error.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });
        match first_error.into_inner().unwrap() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn fetch(&self, batch: &[String]) -> Result<(), EmbedError> {
        let vectors = self.provider.embed_tokens(batch)?;
        if vectors.len() != batch.len() {
            return Err(EmbedError::Schema("provider returned wrong count".into()));
        }
        let mut memo = self.memo.lock().unwrap();
        for (t, v) in batch.iter().zip(vectors) {
            if let Some(cache) = &self.cache {
                let request = json!({"provider": self.provider.id(), "input": [t]});
                cache
                    .insert(&self.cache_key(t), request, serde_json::to_value(&v).expect("vector serializes"))
                    .map_err(|e| EmbedError::Cache(e.to_string()))?;
            }
            memo.insert(t.clone(), v);
        }
        Ok(())
    }

    pub fn embed(&self, tokens: &TokenSeq) -> Result<Embedded, EmbedError> {
        self.prefetch(tokens.tokens(), 1)?;
        let memo = self.memo.lock().unwrap();
        let mut rows = Vec::with_capacity(tokens.len());
        let mut n_fallback = 0;
        let mut dim = None;
        for t in tokens.tokens() {
            let v = &memo[t];
            let expected = *dim.get_or_insert(v.values.len());
            if v.values.len() != expected {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    got: v.values.len(),
                });
            }
            n_fallback += usize::from(v.fallback);
            rows.push(v.values.clone());
        }
        let matrix = EmbeddingMatrix::normalized(rows).map_err(|e| match e {
            super::bertscore::BertScoreError::ZeroVector(i) => {
                EmbedError::ZeroVector(tokens.tokens()[i].clone())
            }
            other => EmbedError::Schema(other.to_string()),
        })?;
        Ok(Embedded { matrix, n_fallback })
    }
}

/// Embeds a token sequence through `embedder`.
pub fn embed(tokens: &TokenSeq, embedder: &Embedder) -> Result<Embedded, EmbedError> {
    embedder.embed(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::MockServer;
    use std::time::Duration;

    fn toks(ts: &[&str]) -> TokenSeq {
        ts.iter().copied().collect()
    }

    #[test]
    fn lookup_rows_are_unit_norm() {
        let table = HashMap::from([
            ("rise".to_string(), vec![3.0, 4.0]),
            ("fall".to_string(), vec![0.0, 2.0]),
        ]);
        let emb = Embedder::new(Box::new(LookupProvider::from_table("t", table).unwrap()));
        let out = embed(&toks(&["rise", "fall"]), &emb).unwrap();
        assert_eq!(out.matrix.len(), 2);
        assert_eq!(out.matrix.dim(), 2);
        assert!(out.matrix.unit_normalized());
        assert_eq!(out.matrix.rows()[0], vec![0.6, 0.8]);
        assert_eq!(out.n_fallback, 0);
    }

    #[test]
    fn unknown_tokens_fall_back_deterministically() {
        let table = HashMap::from([("rise".to_string(), vec![1.0, 0.0, 0.0])]);
        let emb = Embedder::new(Box::new(LookupProvider::from_table("t", table).unwrap()));
        let a = embed(&toks(&["zzz", "rise"]), &emb).unwrap();
        assert_eq!(a.n_fallback, 1);
        let h = hashed_unit_vector("zzz", 3);
        assert!(a.matrix.rows()[0].iter().zip(&h).all(|(x, y)| (x - y).abs() < 1e-12));
        let other = Embedder::new(Box::new(LookupProvider::hashing(3)));
        assert_eq!(embed(&toks(&["zzz"]), &other).unwrap().matrix.rows()[0], a.matrix.rows()[0]);
    }

    #[test]
    fn repeated_tokens_identical_rows() {
        let emb = Embedder::new(Box::new(LookupProvider::hashing(16)));
        let out = embed(&toks(&["a", "b", "a"]), &emb).unwrap();
        assert_eq!(out.matrix.rows()[0], out.matrix.rows()[2]);
        assert_ne!(out.matrix.rows()[0], out.matrix.rows()[1]);
    }

    #[test]
    fn table_dimension_checked() {
        let table = HashMap::from([
            ("a".to_string(), vec![1.0]),
            ("b".to_string(), vec![1.0, 0.0]),
        ]);
        assert!(matches!(
            LookupProvider::from_table("t", table),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn load_text_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vecs.txt");
        std::fs::write(&p, "Profit 1 0\nloss 0 1\n").unwrap();
        let provider = LookupProvider::load_text(&p).unwrap();
        assert_eq!(provider.dim(), 2);
        let out = provider.embed_tokens(&["profit".into()]).unwrap();
        assert!(!out[0].fallback);
    }

    #[test]
    fn http_provider_with_persistent_cache() {
        let server = MockServer::builder().embedding_dim(8).build();
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("emb.jsonl");
        let make = |url: &str| {
            Embedder::new(Box::new(HttpEmbeddingProvider::new(
                HttpEndpoint::new(url, None, Duration::from_secs(5)),
                "mock-embed",
                RetryPolicy {
                    max_attempts: 1,
                    ..RetryPolicy::default()
                },
            )))
            .with_cache(Arc::new(ResponseCache::open(&cache_path).unwrap()))
        };
        let first = embed(&toks(&["revenue", "grew", "revenue"]), &make(&server.url())).unwrap();
        assert_eq!(server.stats().embedding_requests(), 1);
        assert_eq!(first.matrix.dim(), 8);
        // warm cache: a dead endpoint is never contacted
        let second = embed(&toks(&["revenue", "grew", "revenue"]), &make("http://127.0.0.1:9")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn unreachable_provider() {
        let emb = Embedder::new(Box::new(HttpEmbeddingProvider::new(
            HttpEndpoint::new("http://127.0.0.1:9", None, Duration::from_millis(200)),
            "m",
            RetryPolicy {
                max_attempts: 1,
                ..RetryPolicy::default()
            },
        )));
        assert!(matches!(
            embed(&toks(&["x"]), &emb),
            Err(EmbedError::ProviderUnreachable(_))
        ));
    }
}
