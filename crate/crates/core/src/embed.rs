//! Embedding providers and cosine similarity.
//!
//! [`HashEmbedder`] is the offline default: case-folded character 3-grams are
//! feature-hashed with a sign bit into `dim` buckets and L2-normalized. It is
//! a pure function of its input and identical on every platform. The
//! [`HttpEmbedder`] speaks the common `{model, input}` / `{embeddings}` wire
//! shape and caches vectors by `(provider id, text hash)`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{is_retryable_status, HttpTransport, RetryPolicy, Sleeper, TransportError};
use crate::text::{sha256_hex, stable_hash64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("embedding service returned status {status}: {message}")]
    Http { status: u16, retryable: bool, message: String },
    #[error("embedding transport failed: {0}")]
    Transport(#[from] TransportError),
    #[error("malformed embedding response: {0}")]
    Decode(String),
    #[error("embedding cache io: {0}")]
    Cache(String),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        match self {
            EmbedError::Http { retryable, .. } => *retryable,
            EmbedError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(components: Vec<f64>) -> Result<Self, EmbedError> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(EmbedError::Decode("non-finite component".into()));
        }
        Ok(Embedding(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Result<Self, EmbedError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        self.0.iter_mut().for_each(|x| *x /= n);
        Ok(self)
    }
}

pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimMismatch(u.dim(), v.dim()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier; part of the cache key and stored in index files.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub cache_path: Option<PathBuf>,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            kind: ProviderKind::Hash,
            dim: HashEmbedder::DEFAULT_DIM,
            endpoint: None,
            model: None,
            auth_env: None,
            cache_path: None,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 {
            return Err("embedding dim must be > 0".into());
        }
        if self.kind == ProviderKind::Http && self.endpoint.is_none() {
            return Err("http embedding provider requires an endpoint".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dim must be positive");
        HashEmbedder { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-3gram-v1/{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let folded = crate::text::normalize_whitespace(&text.to_lowercase());
        if folded.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let padded: Vec<char> = format!(" {folded} ").chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = [0u8; 12];
        for gram in padded.windows(3) {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = stable_hash64(&buf[..len]);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            // every gram cancelled; fall back to unsigned counts
            for gram in padded.windows(3) {
                let s: String = gram.iter().collect();
                v[(stable_hash64(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
            }
        }
        Embedding(v).normalized()
    }
}

/// Read-through embedding cache, optionally persisted as JSON lines.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: Mutex<HashMap<(String, String), Embedding>>,
    path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    provider: String,
    text_sha256: String,
    vector: Embedding,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let mut map = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| EmbedError::Cache(e.to_string()))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let rec: CacheRecord = serde_json::from_str(line).map_err(|e| EmbedError::Cache(e.to_string()))?;
                map.insert((rec.provider, rec.text_sha256), rec.vector);
            }
        }
        Ok(EmbeddingCache { entries: Mutex::new(map), path: Some(path.to_path_buf()) })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, provider: &str, text: &str) -> Option<Embedding> {
        self.entries.lock().unwrap().get(&(provider.to_string(), sha256_hex(text))).cloned()
    }

    /// Insert unless another caller got there first; returns the stored value.
    pub fn insert(&self, provider: &str, text: &str, v: Embedding) -> Embedding {
        let mut map = self.entries.lock().unwrap();
        map.entry((provider.to_string(), sha256_hex(text))).or_insert(v).clone()
    }

    pub fn flush(&self) -> Result<(), EmbedError> {
        let Some(path) = &self.path else { return Ok(()) };
        let map = self.entries.lock().unwrap();
        let mut keys: Vec<_> = map.keys().collect();
        keys.sort();
        let mut out = String::new();
        for key in keys {
            let rec = CacheRecord { provider: key.0.clone(), text_sha256: key.1.clone(), vector: map[key].clone() };
            out.push_str(&serde_json::to_string(&rec).map_err(|e| EmbedError::Cache(e.to_string()))?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| EmbedError::Cache(e.to_string()))
    }
}

pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    token: Option<String>,
    transport: Arc<dyn HttpTransport>,
    cache: Arc<EmbeddingCache>,
    retry: RetryPolicy,
    sleeper: Box<Sleeper>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dim: usize,
        token: Option<String>,
        transport: Arc<dyn HttpTransport>,
        cache: Arc<EmbeddingCache>,
    ) -> Self {
        HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            token,
            transport,
            cache,
            retry: RetryPolicy::default(),
            sleeper: crate::http::thread_sleeper(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy, sleeper: Box<Sleeper>) -> Self {
        self.retry = retry;
        self.sleeper = sleeper;
        self
    }

    fn request(&self, inputs: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let body = serde_json::json!({ "model": self.model, "input": inputs });
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(t) = &self.token {
            headers.push(("Authorization".to_string(), format!("Bearer {t}")));
        }
        let mut attempt = 0;
        loop {
            let err = match self.transport.post_json(&self.endpoint, &headers, &body) {
                Ok(resp) if resp.status == 200 => return self.decode(&resp.body, inputs.len()),
                Ok(resp) => EmbedError::Http {
                    status: resp.status,
                    retryable: is_retryable_status(resp.status),
                    message: resp.body.chars().take(200).collect(),
                },
                Err(e) => EmbedError::Transport(e),
            };
            attempt += 1;
            if !err.is_retryable() || attempt >= self.retry.max_attempts {
                return Err(err);
            }
            (self.sleeper)(self.retry.delay_before_retry(attempt - 1));
        }
    }

    fn decode(&self, body: &str, expected: usize) -> Result<Vec<Embedding>, EmbedError> {
        #[derive(Deserialize)]
        struct Resp {
            embeddings: Vec<Vec<f64>>,
        }
        let resp: Resp = serde_json::from_str(body).map_err(|e| EmbedError::Decode(e.to_string()))?;
        if resp.embeddings.len() != expected {
            return Err(EmbedError::Decode(format!("expected {expected} vectors, got {}", resp.embeddings.len())));
        }
        resp.embeddings
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimMismatch(v.len(), self.dim));
                }
                Embedding::new(v)?.normalized()
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> String {
        format!("http/{}/{}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let id = self.id();
        let mut out: Vec<Option<Embedding>> = texts.iter().map(|t| self.cache.get(&id, t)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let inputs: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fetched = self.request(&inputs)?;
            for (&i, v) in missing.iter().zip(fetched) {
                out[i] = Some(self.cache.insert(&id, texts[i], v));
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

/// Build a provider from configuration.
pub fn build_provider(
    cfg: &EmbeddingProviderConfig,
    transport: Arc<dyn HttpTransport>,
) -> Result<Arc<dyn EmbeddingProvider>, EmbedError> {
    match cfg.kind {
        ProviderKind::Hash => Ok(Arc::new(HashEmbedder::new(cfg.dim.max(1)))),
        ProviderKind::Http => {
            let cache = match &cfg.cache_path {
                Some(p) => EmbeddingCache::open(p)?,
                None => EmbeddingCache::in_memory(),
            };
            let token = cfg.auth_env.as_ref().and_then(|k| std::env::var(k).ok());
            Ok(Arc::new(HttpEmbedder::new(
                cfg.endpoint.clone().unwrap_or_default(),
                cfg.model.clone().unwrap_or_else(|| "bge-base-en-v1.5".into()),
                cfg.dim,
                token,
                transport,
                Arc::new(cache),
            )))
        }
    }
}
