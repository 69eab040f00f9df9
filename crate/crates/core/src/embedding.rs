//! Unit-normalized text embeddings behind a pluggable [`Encoder`].
//!
//! The built-in `test_hash` encoder is a signed feature-hashing bag of
//! words: text is lowercased and split on non-alphanumeric characters;
//! each token is hashed with 64-bit FNV-1a; the token adds `+1` (top hash
//! bit clear) or `-1` (top bit set) to bucket `hash % dims`; the bucket
//! vector is then scaled to unit length.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result, TransportError};
use crate::http::{HttpEndpointConfig, JsonPoster};
use crate::limiter::InFlightLimiter;

/// Encoder model recorded for the remote kind when none is configured.
pub const DEFAULT_REMOTE_MODEL: &str = "sentence-transformers/all-mpnet-base-v2";
pub const DEFAULT_TEST_DIMS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dims: usize) -> Self {
        Self(vec![0.0; dims])
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Scales to unit length; the zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|x| *x /= n);
        }
        self
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Remote,
    TestHash,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Remote => "remote",
            EncoderKind::TestHash => "test_hash",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    #[serde(default)]
    pub model_id: String,
    pub dims: usize,
}

impl EncoderSpec {
    pub fn test_hash(dims: usize) -> Self {
        Self {
            kind: EncoderKind::TestHash,
            model_id: String::new(),
            dims,
        }
    }

    pub fn remote(model_id: impl Into<String>, dims: usize) -> Self {
        Self {
            kind: EncoderKind::Remote,
            model_id: model_id.into(),
            dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims < 2 {
            return Err(Error::Config(format!(
                "encoder dims must be >= 2, got {}",
                self.dims
            )));
        }
        if self.kind == EncoderKind::Remote && self.model_id.trim().is_empty() {
            return Err(Error::Config("remote encoder requires a model_id".into()));
        }
        Ok(())
    }
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self::test_hash(DEFAULT_TEST_DIMS)
    }
}

/// Stateless text encoder. Implementations must return vectors of
/// `spec().dims` entries, each unit-normalized or exactly zero.
pub trait Encoder: Send + Sync {
    fn spec(&self) -> &EncoderSpec;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or_else(|| {
            Error::Transport(TransportError::Fatal("encoder returned no vector".into()))
        })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

pub fn hash_embed(text: &str, dims: usize) -> EmbeddingVector {
    let mut buckets = vec![0.0f64; dims];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        buckets[(h % dims as u64) as usize] += sign;
    }
    EmbeddingVector(buckets).normalized()
}

#[derive(Debug, Clone)]
pub struct HashEncoder {
    spec: EncoderSpec,
}

impl HashEncoder {
    pub fn new(dims: usize) -> Result<Self> {
        let spec = EncoderSpec::test_hash(dims);
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl Encoder for HashEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts
            .iter()
            .map(|t| hash_embed(t, self.spec.dims))
            .collect())
    }
}

/// HTTP encoder: POST `{"model", "input": [texts]}`, expects
/// `{"data": [{"embedding": [..]}, ..]}` in input order.
pub struct RemoteEncoder {
    spec: EncoderSpec,
    poster: JsonPoster,
    limiter: InFlightLimiter,
    batch_size: usize,
}

impl RemoteEncoder {
    pub fn new(
        spec: EncoderSpec,
        endpoint: HttpEndpointConfig,
        max_inflight: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if endpoint.url.is_empty() {
            return Err(Error::Config("remote encoder requires a url".into()));
        }
        Ok(Self {
            spec,
            poster: JsonPoster::new(endpoint),
            limiter: InFlightLimiter::new(max_inflight),
            batch_size: 64,
        })
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let _permit = self.limiter.acquire();
        let body = json!({ "model": self.spec.model_id, "input": texts });
        let response = self.poster.post(&body)?;
        let data = response
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| TransportError::Fatal("embedding response lacks `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(TransportError::Fatal(format!(
                "embedding response has {} vectors for {} inputs",
                data.len(),
                texts.len()
            ))
            .into());
        }
        data.iter()
            .map(|item| {
                let values: Vec<f64> = item
                    .get("embedding")
                    .and_then(|e| e.as_array())
                    .ok_or_else(|| TransportError::Fatal("item lacks `embedding`".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| TransportError::Fatal("non-numeric embedding".into()))
                    })
                    .collect::<std::result::Result<_, _>>()?;
                if values.len() != self.spec.dims {
                    return Err(Error::DimensionMismatch {
                        expected: self.spec.dims,
                        found: values.len(),
                    });
                }
                Ok(EmbeddingVector(values).normalized())
            })
            .collect()
    }
}

impl Encoder for RemoteEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for (chunk_no, chunk) in texts.chunks(self.batch_size).enumerate() {
            let vectors = self.request(chunk).map_err(|e| Error::Indexed {
                index: chunk_no * self.batch_size,
                source: Box::new(e),
            })?;
            out.extend(vectors);
        }
        Ok(out)
    }
}

pub fn embed(text: &str, encoder: &dyn Encoder) -> Result<EmbeddingVector> {
    encoder.embed(text)
}

/// Order-preserving batch embedding.
pub fn batch_embed<S: AsRef<str>>(
    texts: &[S],
    encoder: &dyn Encoder,
) -> Result<Vec<EmbeddingVector>> {
    let refs: Vec<&str> = texts.iter().map(|s| s.as_ref()).collect();
    encoder.embed_batch(&refs)
}

/// Cosine similarity clamped to [-1, 1]; 0 when either side is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
