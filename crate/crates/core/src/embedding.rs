//! Text embeddings and the cosine-similarity arithmetic that retrieval,
//! forgetting, clustering and repetition detection are built on.
//!
//! Providers sit behind [`EmbeddingProvider`]. The crate ships a
//! deterministic hashed bag-of-tokens provider for tests and scripted runs,
//! an HTTP provider for a remote embedding service, and a persistent cache
//! that can wrap either.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default bucket count of the hashed bag-of-tokens provider.
pub const DEFAULT_DIMENSION: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm embedding vector")]
    ZeroNorm,
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("empty embedding vector")]
    Empty,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    Unavailable(String),
    #[error("embedding cache error: {0}")]
    Cache(String),
}

/// A fixed-dimension real vector standing in for a piece of text.
///
/// The Euclidean norm is computed once at construction; every component is
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Little-endian `f64` bytes, base64 encoded. Round-trips exactly.
    pub fn to_base64(&self) -> String {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        B64.encode(bytes)
    }

    pub fn from_base64(encoded: &str) -> Result<Self, EmbeddingError> {
        let bytes = B64
            .decode(encoded.trim())
            .map_err(|e| EmbeddingError::Cache(format!("bad base64 embedding: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(EmbeddingError::Cache(format!(
                "embedding byte length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(values)
    }
}

/// Normalized dot product `(a·b) / (‖a‖₂‖b‖₂)`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot / (a.norm * b.norm))
}

/// Something that turns text into vectors of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// True when the same text always maps to the same vector.
    fn deterministic(&self) -> bool;
    /// Provider-specific embedding. Callers should go through [`embed`],
    /// which validates the input and the output dimension.
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

/// Embeds `text`, rejecting blank input and checking the provider kept its
/// advertised dimension.
pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let v = provider.embed_text(text)?;
    if v.dimension() != provider.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: provider.dimension(),
            found: v.dimension(),
        });
    }
    if v.norm() == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok(v)
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer so the low bits used for bucketing are well mixed
    hash ^= hash >> 30;
    hash = hash.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    hash ^= hash >> 27;
    hash = hash.wrapping_mul(0x94d0_49bb_1331_11eb);
    hash ^ (hash >> 31)
}

/// Deterministic test provider: token counts hashed into `dimension`
/// buckets, then L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedBagOfTokens {
    dimension: usize,
}

impl HashedBagOfTokens {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Default for HashedBagOfTokens {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for HashedBagOfTokens {
    fn name(&self) -> &str {
        "hashed-bag-of-tokens"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut counts = vec![0.0f64; self.dimension];
        let mut any = false;
        for token in tokenize(text) {
            counts[self.bucket(&token)] += 1.0;
            any = true;
        }
        if !any {
            return Err(EmbeddingError::ZeroNorm);
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in &mut counts {
            *c /= norm;
        }
        EmbeddingVector::new(counts)
    }
}

/// Remote embedding backend: POSTs the UTF-8 text to a single endpoint and
/// expects a JSON array of `dimension` floats back.
pub struct HttpEmbeddingProvider {
    name: String,
    endpoint: String,
    dimension: usize,
    retries: u32,
    deterministic: bool,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, dimension: usize, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            name: name.into(),
            endpoint: endpoint.into(),
            dimension,
            retries,
            deterministic: true,
            agent,
        }
    }

    /// Marks the backend as non-deterministic (e.g. a sampling model).
    pub fn nondeterministic(mut self) -> Self {
        self.deterministic = false;
        self
    }

    fn request(&self, text: &str) -> Result<Vec<f64>, String> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .content_type("text/plain; charset=utf-8")
            .send(text)
            .map_err(|e| e.to_string())?;
        response
            .body_mut()
            .read_json::<Vec<f64>>()
            .map_err(|e| e.to_string())
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn deterministic(&self) -> bool {
        self.deterministic
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            match self.request(text) {
                Ok(values) => return EmbeddingVector::new(values),
                Err(e) => {
                    tracing::warn!(provider = %self.name, attempt, error = %e, "embedding request failed");
                    last_error = e;
                }
            }
        }
        Err(EmbeddingError::Unavailable(last_error))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    embedding: String,
}

/// Caches another provider's vectors keyed by (provider name, SHA-256 of the
/// text). With a backing file the cache survives across runs: entries are
/// appended as JSON lines and reloaded on open.
pub struct CachedEmbedder<P> {
    inner: P,
    entries: Mutex<HashMap<String, EmbeddingVector>>,
    file: Option<PathBuf>,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn in_memory(inner: P) -> Self {
        Self {
            inner,
            entries: Mutex::new(HashMap::new()),
            file: None,
        }
    }

    pub fn persistent(inner: P, path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| EmbeddingError::Cache(e.to_string()))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| EmbeddingError::Cache(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(&line)
                    .map_err(|e| EmbeddingError::Cache(format!("{}:{}: {e}", path.display(), n + 1)))?;
                entries.insert(parsed.key, EmbeddingVector::from_base64(&parsed.embedding)?);
            }
        }
        Ok(Self {
            inner,
            entries: Mutex::new(entries),
            file: Some(path),
        })
    }

    pub fn cache_key(&self, text: &str) -> String {
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("{}:{}", self.inner.name(), hex)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let key = self.cache_key(text);
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        // The lock is not held across the (possibly remote) call.
        let vector = self.inner.embed_text(text)?;
        let mut entries = self.entries.lock().expect("cache lock");
        if entries.contains_key(&key) {
            return Ok(vector);
        }
        if let Some(path) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                embedding: vector.to_base64(),
            })
            .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| EmbeddingError::Cache(e.to_string()))?;
        }
        entries.insert(key, vector.clone());
        Ok(vector)
    }
}
