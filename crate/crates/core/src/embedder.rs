//! Sentence embeddings for the semantic-relevance text filter.
//!
//! [`HashEmbedder`] is a deterministic hashed bag-of-words; [`RemoteEmbedder`]
//! calls an external encoder service speaking
//! `POST {"text": ...}` -> `{"embedding": [...]}` and caches by raw string.

use std::collections::HashMap;
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a;
use crate::types::Expression;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidValue("embedding has zero dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("embedding has non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Option<f64> {
    if a.dimension() != b.dimension() {
        return None;
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    if a.values() == b.values() {
        // exact, where dot / (na * nb) can land one ulp below 1
        return Some(1.0);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Maps an expression to a fixed-dimension vector. Implementations must be
/// callable from several threads.
pub trait Embedder: Send + Sync {
    fn embed(&self, expression: &Expression) -> Result<EmbeddingVector>;
}

/// Hashed bag-of-words, L2-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
}

pub const DEFAULT_HASH_DIMENSION: usize = 256;

impl HashEmbedder {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_HASH_DIMENSION,
        }
    }
}

pub fn embed_hash(expression: &Expression, dimension: usize) -> EmbeddingVector {
    assert!(dimension > 0, "embedding dimension must be positive");
    let mut counts = vec![0.0; dimension];
    for token in expression.tokens() {
        counts[(fnv1a(token.as_bytes()) % dimension as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
    // expressions always carry at least one token, so norm > 0
    for v in &mut counts {
        *v /= norm;
    }
    EmbeddingVector(counts)
}

impl Embedder for HashEmbedder {
    fn embed(&self, expression: &Expression) -> Result<EmbeddingVector> {
        Ok(embed_hash(expression, self.dimension))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Client for an external encoder. Results are cached per raw string for the
/// lifetime of the client; concurrent misses on the same key may both fetch.
pub struct RemoteEmbedder {
    endpoint: String,
    agent: ureq::Agent,
    cache: RwLock<HashMap<String, EmbeddingVector>>,
    dimension: RwLock<Option<usize>>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            cache: RwLock::new(HashMap::new()),
            dimension: RwLock::new(None),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    fn transport(&self, message: impl ToString) -> Error {
        Error::Transport {
            endpoint: self.endpoint.clone(),
            message: message.to_string(),
        }
    }

    fn fetch(&self, text: &str) -> Result<EmbeddingVector> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { text })
            .map_err(|e| self.transport(e))?;
        let body: EmbedResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| self.transport(format!("malformed response: {e}")))?;
        EmbeddingVector::new(body.embedding).map_err(|e| self.transport(format!("malformed response: {e}")))
    }
}

pub fn embed_remote(client: &RemoteEmbedder, expression: &Expression) -> Result<EmbeddingVector> {
    let key = expression.raw();
    if let Some(hit) = client.cache.read().ok().and_then(|c| c.get(key).cloned()) {
        return Ok(hit);
    }
    let vector = client.fetch(key)?;
    {
        let mut dim = client
            .dimension
            .write()
            .map_err(|_| client.transport("dimension lock poisoned"))?;
        match *dim {
            Some(d) if d != vector.dimension() => {
                return Err(Error::Protocol {
                    endpoint: client.endpoint.clone(),
                    message: format!(
                        "embedding dimension {} differs from earlier responses ({d})",
                        vector.dimension()
                    ),
                })
            }
            Some(_) => {}
            None => *dim = Some(vector.dimension()),
        }
    }
    if let Ok(mut cache) = client.cache.write() {
        cache.insert(key.to_string(), vector.clone());
    }
    Ok(vector)
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, expression: &Expression) -> Result<EmbeddingVector> {
        embed_remote(self, expression)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dimension: DEFAULT_HASH_DIMENSION,
            endpoint: None,
            timeout_ms: 5_000,
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        match self.kind {
            EmbedderKind::Hash => Ok(Box::new(HashEmbedder::new(self.dimension)?)),
            EmbedderKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("embedder.kind = remote requires embedder.endpoint".into()))?;
                Ok(Box::new(RemoteEmbedder::new(
                    endpoint,
                    Duration::from_millis(self.timeout_ms),
                )))
            }
        }
    }
}
