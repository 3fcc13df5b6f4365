//! Text embeddings and cosine similarity.
//!
//! [`HashEmbedder`] is the offline embedder: tokens are hashed into a fixed
//! number of buckets with seeded FNV-1a, counted, and L2-normalized. It is a
//! pure function of its input bytes. [`HttpEmbedder`] talks to a live
//! embeddings endpoint.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::json;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_SEED: u64 = 0x5eed_c0de_2025_0001;

/// A unit-norm vector, or the all-zero vector standing for empty text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    pub components: Vec<T>,
}

pub type Embedding = EmbeddingVector<f64>;

impl<T: Real> EmbeddingVector<T> {
    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector {
            components: vec![T::zero(); dimension],
        }
    }

    /// Scales `raw` to unit length; a zero vector stays zero.
    pub fn normalized(raw: Vec<T>) -> Self {
        let norm = raw.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm == T::zero() {
            return EmbeddingVector { components: raw };
        }
        EmbeddingVector {
            components: raw.into_iter().map(|x| x / norm).collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> T {
        self.components
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|&x| x == T::zero())
    }
}

/// `dot(u, v) / (|u| |v|)`, or 0 when either vector has zero norm.
pub fn cosine<T: Real>(u: &EmbeddingVector<T>, v: &EmbeddingVector<T>) -> Result<T> {
    if u.dimension() != v.dimension() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            u.dimension(),
            v.dimension()
        )));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == T::zero() || nv == T::zero() {
        return Ok(T::zero());
    }
    let dot = u
        .components
        .iter()
        .zip(&v.components)
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    Ok(dot / (nu * nv))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }
}

/// Lowercased runs of alphanumeric characters and underscores.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Seeded token-bucket hashing embedder.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_SEED,
        }
    }
}

impl HashEmbedder {
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(self.seed, token.as_bytes()) % self.dimension as u64) as usize
    }

    pub fn embed_as<T: Real>(&self, text: &str) -> EmbeddingVector<T> {
        let mut counts = vec![T::zero(); self.dimension];
        for token in tokenize(text) {
            let slot = &mut counts[self.bucket(&token)];
            *slot = *slot + T::one();
        }
        EmbeddingVector::normalized(counts)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding> {
        Ok(self.embed_as::<f64>(text))
    }
}

/// Caches embeddings by exact text.
pub struct MemoEmbedder<E> {
    inner: E,
    memo: Mutex<HashMap<String, Embedding>>,
}

impl<E: Embedder> MemoEmbedder<E> {
    pub fn new(inner: E) -> Self {
        MemoEmbedder {
            inner,
            memo: Mutex::new(HashMap::new()),
        }
    }
}

impl<E: Embedder> Embedder for MemoEmbedder<E> {
    fn embed(&self, text: &str) -> Result<Embedding> {
        if let Some(hit) = self.memo.lock().expect("memo poisoned").get(text) {
            return Ok(hit.clone());
        }
        let v = self.inner.embed(text)?;
        self.memo
            .lock()
            .expect("memo poisoned")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// Client for an embeddings endpoint accepting `{"input", "model"}` and
/// answering with `data[0].embedding`.
pub struct HttpEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    attempts: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Configuration(e.to_string()))?;
        Ok(HttpEmbedder {
            url: url.into(),
            model: model.into(),
            api_key,
            attempts: 3,
            backoff: Duration::from_millis(500),
            client,
        })
    }

    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn attempt(&self, text: &str) -> std::result::Result<Vec<f64>, String> {
        let mut req = self
            .client
            .post(&self.url)
            .json(&json!({ "input": text, "model": self.model }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let body: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
        let values = body
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| "response lacks data[0].embedding".to_string())?;
        values
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| "non-numeric embedding component".to_string()))
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding> {
        let started = Instant::now();
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(text) {
                Ok(raw) => return Ok(EmbeddingVector::normalized(raw)),
                Err(msg) => {
                    log::warn!("embedding attempt {attempt} failed: {msg}");
                    last = msg;
                    if attempt < self.attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Provider {
            message: last,
            attempts: self.attempts,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        })
    }
}
