//! Text embeddings behind a provider contract.
//!
//! Every vector leaving this module is L2-normalized, so retrieval can use
//! plain dot products. Two providers ship: [`RemoteEmbedder`], speaking a
//! small JSON wire format over HTTP, and [`MockEmbedder`], a deterministic
//! hashed bag-of-tokens used for offline pipelines and tests.
//!
//! The mock vector for a text is defined as follows:
//!
//! 1. lowercase the text and split it on whitespace;
//! 2. hash each token's UTF-8 bytes with 64-bit FNV-1a;
//! 3. seed splitmix64 with the hash and draw `dim` values `u`, mapping each
//!    to `((u >> 11) * 2^-53) * 2 - 1`;
//! 4. sum the token vectors, substitute `(1, 0, ..., 0)` for a zero sum,
//!    L2-normalize and round each component to `f32`.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::hash::{fnv1a64, SplitMix64};
use crate::http::{
    auth_headers, post_with_retry, CallError, HttpTransport, InflightLimiter, RetryPolicy, Sleeper,
    ThreadSleeper, UreqTransport,
};

/// Allowed deviation of a stored vector's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_MOCK_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("text at index {0} is empty")]
    EmptyText(usize),
    #[error("embedding provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("embedding provider rejected request (HTTP {status}): {body}")]
    ProviderRejected { status: u16, body: String },
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("invalid embedding config: {0}")]
    InvalidConfig(String),
}

impl From<CallError> for EmbedError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Unreachable { .. } => Self::ProviderUnreachable(e.to_string()),
            CallError::Rejected { status, body } => Self::ProviderRejected { status, body },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("vector norm {norm} is not within {NORM_TOLERANCE} of 1")]
pub struct NotUnitNorm {
    pub norm: f64,
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `raw`; a zero (or non-finite) vector becomes the first
    /// basis vector.
    pub fn normalized(raw: &[f64]) -> Self {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm > 0.0 && norm.is_finite() {
            raw.iter().map(|v| (v / norm) as f32).collect()
        } else {
            let mut basis = vec![0.0f32; raw.len().max(1)];
            basis[0] = 1.0;
            basis
        };
        Self { values }
    }

    /// Wraps components that are already unit-norm, without touching their
    /// bits.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, NotUnitNorm> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(NotUnitNorm { norm });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Dot product accumulated in `f64`. Equals cosine similarity for unit
    /// vectors.
    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Mock,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "remote" => Ok(Self::Remote),
            "mock" => Ok(Self::Mock),
            other => Err(format!("unknown provider {other:?} (expected remote or mock)")),
        }
    }
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Remote => "remote",
            Self::Mock => "mock",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedProviderConfig {
    pub kind: ProviderKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub dim: usize,
    pub timeout_ms: u64,
    pub max_batch: usize,
    pub max_in_flight: usize,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for EmbedProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint_url: None,
            model_name: "mock-hashed-tokens".into(),
            dim: DEFAULT_MOCK_DIM,
            timeout_ms: 30_000,
            max_batch: 64,
            max_in_flight: 4,
            api_key: None,
        }
    }
}

impl EmbedProviderConfig {
    pub fn mock(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.max_batch == 0 || self.timeout_ms == 0 {
            return Err(EmbedError::InvalidConfig("max_batch and timeout_ms must be positive".into()));
        }
        match self.kind {
            ProviderKind::Remote if self.endpoint_url.as_deref().is_none_or(str::is_empty) => Err(
                EmbedError::InvalidConfig("remote provider requires endpoint_url (AUDITNET_EMBED_URL)".into()),
            ),
            ProviderKind::Mock if self.dim == 0 => {
                Err(EmbedError::InvalidConfig("mock provider requires a positive dim".into()))
            }
            _ => Ok(()),
        }
    }
}

pub trait Embedder: Send + Sync {
    /// Embeds one request-sized batch.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn max_batch(&self) -> usize;

    fn kind(&self) -> ProviderKind;
}

/// Embeds `texts` in order, splitting into provider-sized batches.
pub fn embed_texts<S: AsRef<str>>(
    embedder: &dyn Embedder,
    texts: &[S],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let texts: Vec<&str> = texts.iter().map(AsRef::as_ref).collect();
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText(i));
    }
    let mut out = Vec::with_capacity(texts.len());
    for batch in texts.chunks(embedder.max_batch().max(1)) {
        let vectors = embedder.embed_batch(batch)?;
        if vectors.len() != batch.len() {
            return Err(EmbedError::MalformedResponse(format!(
                "expected {} vectors, got {}",
                batch.len(),
                vectors.len()
            )));
        }
        out.extend(vectors);
    }
    if let Some(first) = out.first() {
        let expected = first.dim();
        if let Some(v) = out.iter().find(|v| v.dim() != expected) {
            return Err(EmbedError::DimensionMismatch {
                expected,
                found: v.dim(),
            });
        }
    }
    Ok(out)
}

pub fn embed_one(embedder: &dyn Embedder, text: &str) -> Result<EmbeddingVector, EmbedError> {
    Ok(embed_texts(embedder, &[text])?.remove(0))
}

/// Deterministic hashed bag-of-tokens embedder.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    max_batch: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            max_batch: 64,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, text: &str) -> EmbeddingVector {
        mock_vector(text, self.dim)
    }
}

pub fn mock_vector(text: &str, dim: usize) -> EmbeddingVector {
    let mut sum = vec![0.0f64; dim];
    for token in text.to_lowercase().split_whitespace() {
        let mut rng = SplitMix64::new(fnv1a64(token.as_bytes()));
        for slot in sum.iter_mut() {
            let u = rng.next_u64();
            *slot += ((u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)) * 2.0 - 1.0;
        }
    }
    EmbeddingVector::normalized(&sum)
}

impl Embedder for MockEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Embedding provider reached over HTTP.
pub struct RemoteEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    max_batch: usize,
    retry: RetryPolicy,
    transport: Arc<dyn HttpTransport>,
    sleeper: Arc<dyn Sleeper>,
    limiter: InflightLimiter,
    /// Dimension of the first response; later responses must match.
    dim: Mutex<Option<usize>>,
}

impl RemoteEmbedder {
    pub fn new(config: &EmbedProviderConfig) -> Result<Self, EmbedError> {
        Self::with_transport(config, Arc::new(UreqTransport), Arc::new(ThreadSleeper))
    }

    pub fn with_transport(
        config: &EmbedProviderConfig,
        transport: Arc<dyn HttpTransport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self, EmbedError> {
        let config = EmbedProviderConfig {
            kind: ProviderKind::Remote,
            ..config.clone()
        };
        config.validate()?;
        Ok(Self {
            url: config.endpoint_url.clone().unwrap_or_default(),
            model: config.model_name.clone(),
            api_key: config.api_key.clone(),
            timeout: Duration::from_millis(config.timeout_ms),
            max_batch: config.max_batch,
            retry: RetryPolicy::default(),
            transport,
            sleeper,
            limiter: InflightLimiter::new(config.max_in_flight),
            dim: Mutex::new(None),
        })
    }

    fn check_dim(&self, found: usize) -> Result<(), EmbedError> {
        let mut dim = self.dim.lock().unwrap_or_else(|e| e.into_inner());
        match *dim {
            None => {
                *dim = Some(found);
                Ok(())
            }
            Some(expected) if expected == found => Ok(()),
            Some(expected) => Err(EmbedError::DimensionMismatch { expected, found }),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = serde_json::to_string(&EmbedRequest {
            model: &self.model,
            input: texts,
        })
        .expect("request serializes");
        let resp = {
            let _permit = self.limiter.acquire();
            post_with_retry(
                self.transport.as_ref(),
                self.sleeper.as_ref(),
                &self.retry,
                &self.url,
                &auth_headers(self.api_key.as_deref()),
                &body,
                self.timeout,
            )?
        };
        let parsed: EmbedResponse = serde_json::from_str(&resp.body)
            .map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for datum in parsed.data {
            let slot = slots.get_mut(datum.index).ok_or_else(|| {
                EmbedError::MalformedResponse(format!("index {} out of range", datum.index))
            })?;
            if slot.replace(datum.embedding).is_some() {
                return Err(EmbedError::MalformedResponse(format!("duplicate index {}", datum.index)));
            }
        }
        let mut out = Vec::with_capacity(texts.len());
        for (i, slot) in slots.into_iter().enumerate() {
            let raw = slot.ok_or_else(|| EmbedError::MalformedResponse(format!("missing index {i}")))?;
            if raw.is_empty() || raw.iter().all(|v| *v == 0.0) || raw.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::MalformedResponse(format!("unusable vector at index {i}")));
            }
            self.check_dim(raw.len())?;
            out.push(EmbeddingVector::normalized(&raw));
        }
        Ok(out)
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }
}

pub fn build_embedder(config: &EmbedProviderConfig) -> Result<Arc<dyn Embedder>, EmbedError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::Mock => Arc::new(MockEmbedder {
            dim: config.dim,
            max_batch: config.max_batch,
        }),
        ProviderKind::Remote => Arc::new(RemoteEmbedder::new(config)?),
    })
}
