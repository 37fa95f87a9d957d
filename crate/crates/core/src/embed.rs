//! Text embedders behind a common interface.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::backend::BackendError;
use crate::text::{normalize, tokens};

pub const ENV_EMBED_URL: &str = "EMBEDDING_URL";
pub const ENV_EMBED_KEY: &str = "EMBEDDING_KEY";

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("embedding has {found} dimensions, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scales `raw` to unit length. An all-zero vector maps to the first basis vector.
    pub fn from_raw(mut raw: Vec<f64>) -> Result<Self, EmbedError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            raw.iter_mut().for_each(|v| *v = 0.0);
            if let Some(first) = raw.first_mut() {
                *first = 1.0;
            }
        } else {
            raw.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self(raw))
    }

    /// Wraps values that are already unit length (e.g. read back from disk).
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Cosine similarity; both sides are unit length. `-0.0` is folded into `0.0`.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot + 0.0
    }
}

pub trait Embedder: Send + Sync {
    fn identity(&self) -> String;
    fn dimension(&self) -> usize;
    /// Unnormalized vector for a non-empty text.
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

pub fn embed(embedder: &dyn Embedder, text: &str) -> Result<EmbeddingVector, EmbedError> {
    if normalize(text).is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let raw = embedder.embed_raw(text)?;
    if raw.len() != embedder.dimension() {
        return Err(EmbedError::Dimension {
            expected: embedder.dimension(),
            found: raw.len(),
        });
    }
    EmbeddingVector::from_raw(raw)
}

/// Signed feature hashing over token unigrams and bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256, seed: 0 }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn add(&self, out: &mut [f64], feature: &str) {
        let h = xxh3_64_with_seed(feature.as_bytes(), self.seed);
        let slot = (h % self.dim as u64) as usize;
        out[slot] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
}

impl Embedder for HashingEmbedder {
    fn identity(&self) -> String {
        format!("feature-hash/v1;dim={};seed={}", self.dim, self.seed)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let toks = tokens(&normalize(text));
        let mut out = vec![0.0; self.dim];
        for t in &toks {
            self.add(&mut out, t);
        }
        for pair in toks.windows(2) {
            self.add(&mut out, &format!("{} {}", pair[0], pair[1]));
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

/// Embedding service reached over HTTP: `POST {"model","input"}` answered by
/// `{"embedding": [...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    key: Option<String>,
    model: String,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: impl Into<String>, dim: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            key,
            model: model.into(),
            dim,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }

    pub fn from_env(model: impl Into<String>, dim: usize) -> Result<Self, BackendError> {
        let endpoint =
            std::env::var(ENV_EMBED_URL).map_err(|_| BackendError::Config(format!("{ENV_EMBED_URL} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(ENV_EMBED_KEY).ok(), model, dim))
    }
}

impl Embedder for RemoteEmbedder {
    fn identity(&self) -> String {
        format!("remote/{};dim={}", self.model, self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(EmbedRequest {
                model: &self.model,
                input: text,
            })
            .map_err(|e| match e {
                ureq::Error::Status(status, r) => BackendError::Status {
                    status,
                    body: r.into_string().unwrap_or_default(),
                },
                other => BackendError::Transport(other.to_string()),
            })?;
        let reply: EmbedReply = resp.into_json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(reply.embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit() {
        let e = HashingEmbedder::default();
        let a = embed(&e, "walk past the sofa").unwrap();
        let b = embed(&e, "walk past the sofa").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalization_insensitive() {
        let e = HashingEmbedder::default();
        assert_eq!(embed(&e, "Walk  past the SOFA.").unwrap(), embed(&e, "walk past the sofa").unwrap());
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(embed(&HashingEmbedder::default(), " .. "), Err(EmbedError::EmptyText)));
    }

    #[test]
    fn zero_vector_maps_to_basis() {
        let v = EmbeddingVector::from_raw(vec![0.0; 4]).unwrap();
        assert_eq!(v.values(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(EmbeddingVector::from_raw(vec![f64::NAN]), Err(EmbedError::NonFinite)));
    }

    #[test]
    fn scaling_raw_vector_changes_nothing() {
        let raw = vec![0.3, -1.2, 4.0, 0.0];
        let a = EmbeddingVector::from_raw(raw.clone()).unwrap();
        let b = EmbeddingVector::from_raw(raw.iter().map(|v| v * 8.0).collect()).unwrap();
        assert_eq!(a, b);
    }
}
