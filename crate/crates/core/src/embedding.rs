//! Text embedding backends.
//!
//! Every vector leaving this module is unit-normalized, so downstream cosine
//! similarity is a plain dot product.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seed used by the hashing embedder unless configured otherwise.
pub const DEFAULT_HASH_SEED: u64 = 42;
/// Environment variable holding the remote embedding service URL.
pub const EMBEDDING_URL_ENV: &str = "LITRAG_EMBEDDING_URL";
/// Output width of the scientific-document encoder served remotely.
pub const REMOTE_DIM: usize = 768;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector has a non-finite entry")]
    NonFinite,
    #[error("text has no tokens to embed")]
    EmptyText,
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("expected {expected}-dimensional vectors, backend returned {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("backend returned {actual} vectors for {expected} texts")]
    CountMismatch { expected: usize, actual: usize },
    #[error("invalid embedder config: {0}")]
    Config(String),
}

/// A finite, unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Wraps values that are already unit-norm (within 1e-6), e.g. vectors
    /// read back from an index file.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        if (l2_norm(&values) - 1.0).abs() > UNIT_TOLERANCE {
            return normalize(&values);
        }
        Ok(Self(values))
    }

    /// Inner product accumulated in `f64`, in index order.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::from_unit(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt()
}

/// Scales `v` to unit L2 norm.
///
/// Vectors whose norm is already 1 to within `f32` resolution are returned
/// unchanged, which makes normalization idempotent.
pub fn normalize(v: &[f32]) -> Result<EmbeddingVector, EmbedError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    if (norm - 1.0).abs() <= f64::from(f32::EPSILON) {
        return Ok(EmbeddingVector(v.to_vec()));
    }
    Ok(EmbeddingVector(
        v.iter().map(|x| (f64::from(*x) / norm) as f32).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    RemoteHttp,
    DeterministicHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    pub dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_batch_size() -> usize {
    32
}

fn default_seed() -> u64 {
    DEFAULT_HASH_SEED
}

fn default_timeout_s() -> u64 {
    30
}

impl EmbedderConfig {
    pub fn hash(dim: usize) -> Self {
        Self {
            kind: EmbedderKind::DeterministicHash,
            endpoint_url: None,
            dim,
            batch_size: default_batch_size(),
            seed: DEFAULT_HASH_SEED,
            timeout_s: default_timeout_s(),
        }
    }

    /// Remote encoder config; the endpoint comes from `LITRAG_EMBEDDING_URL`
    /// when `endpoint_url` is `None`.
    pub fn remote(endpoint_url: Option<String>) -> Self {
        Self {
            kind: EmbedderKind::RemoteHttp,
            endpoint_url,
            dim: REMOTE_DIM,
            batch_size: default_batch_size(),
            seed: DEFAULT_HASH_SEED,
            timeout_s: default_timeout_s(),
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Builds the configured backend.
    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::DeterministicHash => Box::new(HashEmbedder::new(self.dim, self.seed)),
            EmbedderKind::RemoteHttp => {
                let url = match &self.endpoint_url {
                    Some(url) => url.clone(),
                    None => std::env::var(EMBEDDING_URL_ENV).map_err(|_| {
                        EmbedError::Config(format!("{EMBEDDING_URL_ENV} is not set"))
                    })?,
                };
                Box::new(RemoteEmbedder::new(
                    url,
                    self.dim,
                    self.batch_size,
                    Duration::from_secs(self.timeout_s),
                ))
            }
        })
    }
}

/// Identity of an embedder, stored alongside an index so queries are
/// embedded the same way as the indexed chunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderInfo {
    pub kind: EmbedderKind,
    pub dim: usize,
    /// Hashing scheme for the hashing embedder, endpoint for the remote one.
    pub model_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl EmbedderConfig {
    /// Config that rebuilds the embedder described by `info`. The remote
    /// endpoint is re-read from the environment when `endpoint_url` is `None`.
    pub fn from_info(info: &EmbedderInfo, endpoint_url: Option<String>) -> Self {
        match info.kind {
            EmbedderKind::DeterministicHash => Self {
                seed: info.seed.unwrap_or(DEFAULT_HASH_SEED),
                ..Self::hash(info.dim)
            },
            EmbedderKind::RemoteHttp => Self {
                dim: info.dim,
                ..Self::remote(endpoint_url)
            },
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn info(&self) -> EmbedderInfo;

    /// One unit vector per input text, in input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_texts(&[text.to_string()])?;
        Ok(out.remove(0))
    }
}

/// Feature-hashing embedder: each whitespace token (lowercased, with
/// surrounding punctuation stripped) adds 1 to a bucket chosen by a seeded
/// FNV-1a hash; the bucket counts are then normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut acc = vec![0f32; self.dim];
        let mut tokens = 0usize;
        for raw in text.split_whitespace() {
            let token = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if token.is_empty() {
                continue;
            }
            tokens += 1;
            let h = seeded_fnv1a(self.seed, token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            acc[bucket] += 1.0;
        }
        if tokens == 0 {
            return Err(EmbedError::EmptyText);
        }
        normalize(&acc)
    }
}

fn seeded_fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    // fmix64 finalizer; FNV alone leaves the low bits poorly mixed
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn info(&self) -> EmbedderInfo {
        EmbedderInfo {
            kind: EmbedderKind::DeterministicHash,
            dim: self.dim,
            model_id: "fnv1a-token-buckets".into(),
            seed: Some(self.seed),
        }
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for an embedding service speaking
/// `POST /embed {"texts": [...]}` -> `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    batch_size: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize, batch_size: usize, timeout: Duration) -> Self {
        let base = base_url.into();
        Self {
            url: format!("{}/embed", base.trim_end_matches('/')),
            dim,
            batch_size: batch_size.max(1),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let response: EmbedResponse = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| EmbedError::BackendUnavailable(format!("bad response body: {e}")))?;
        if response.vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                actual: response.vectors.len(),
            });
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        actual: v.len(),
                    });
                }
                normalize(&v)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn info(&self) -> EmbedderInfo {
        EmbedderInfo {
            kind: EmbedderKind::RemoteHttp,
            dim: self.dim,
            model_id: self.url.clone(),
            seed: None,
        }
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(batch)?);
        }
        Ok(out)
    }
}
