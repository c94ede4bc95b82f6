//! Embedding vectors and providers.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::MemoryError;
use crate::gateway::{RemoteConfig, ENV_API_BASE};

/// A finite, fixed-length vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MemoryError> {
        if values.is_empty() {
            return Err(MemoryError::Provider("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scaled to unit length; zero vectors are returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &Self) -> Result<f64, MemoryError> {
        if self.dim() != other.dim() {
            return Err(MemoryError::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        Ok(if denom == 0.0 { 0.0 } else { (dot / denom).clamp(-1.0, 1.0) })
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = MemoryError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, MemoryError>;
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic pseudo-embeddings by feature hashing.
///
/// The lowercased text is wrapped as `^text$`; every character trigram and
/// every whitespace-separated word (prefixed `w:`) is hashed with FNV-1a 64.
/// Feature `h` adds `±1` at index `h % dim`, negative when the top bit of `h`
/// is set. The sum is L2-normalized. Text with no features maps to the unit
/// vector at `fnv1a64(text) % dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn vector(&self, text: &str) -> Vec<f64> {
        let lowered = text.to_lowercase();
        let mut v = vec![0.0; self.dim];
        let mut add = |feature: &[u8]| {
            let h = fnv1a64(feature);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        };
        let chars: Vec<char> = format!("^{lowered}$").chars().collect();
        for w in chars.windows(3) {
            add(w.iter().collect::<String>().as_bytes());
        }
        for word in lowered.split_whitespace() {
            add(format!("w:{word}").as_bytes());
        }
        if v.iter().all(|x| *x == 0.0) {
            v[(fnv1a64(text.as_bytes()) % self.dim as u64) as usize] = 1.0;
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, MemoryError> {
        Ok(EmbeddingVector::new(self.vector(text))?.normalized())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableFile {
    provider_id: String,
    dim: usize,
    /// Keyed by the lowercase hex FNV-1a 64 hash of the exact text.
    vectors: HashMap<String, Vec<f64>>,
}

/// Precomputed vectors keyed by text hash, e.g. exported from a sentence
/// encoder. Unknown texts are a provider error.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEmbedder {
    provider_id: String,
    dim: usize,
    vectors: HashMap<u64, EmbeddingVector>,
}

impl TableEmbedder {
    pub fn key(text: &str) -> String {
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    pub fn new(provider_id: impl Into<String>, dim: usize) -> Self {
        Self {
            provider_id: provider_id.into(),
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: &str, vector: EmbeddingVector) -> Result<(), MemoryError> {
        if vector.dim() != self.dim {
            return Err(MemoryError::DimMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        self.vectors.insert(fnv1a64(text.as_bytes()), vector);
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let file: TableFile = serde_json::from_str(text)?;
        let mut table = Self::new(file.provider_id, file.dim);
        for (key, values) in file.vectors {
            let hash = u64::from_str_radix(&key, 16)
                .map_err(|_| MemoryError::Provider(format!("bad table key '{key}'")))?;
            let v = EmbeddingVector::new(values)?;
            if v.dim() != table.dim {
                return Err(MemoryError::DimMismatch {
                    expected: table.dim,
                    got: v.dim(),
                });
            }
            table.vectors.insert(hash, v);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = TableFile {
            provider_id: self.provider_id.clone(),
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (format!("{k:016x}"), v.values().to_vec()))
                .collect(),
        };
        serde_json::to_string(&file).expect("table serializes")
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn id(&self) -> String {
        self.provider_id.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, MemoryError> {
        self.vectors
            .get(&fnv1a64(text.as_bytes()))
            .cloned()
            .ok_or_else(|| MemoryError::Provider(format!("no precomputed vector for '{text}'")))
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    config: RemoteConfig,
    dim: usize,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    /// `config.model` names the embedding model; `dim` is its output size.
    pub fn new(config: RemoteConfig, dim: usize) -> Self {
        Self {
            config,
            dim,
            timeout: Duration::from_secs(10),
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, MemoryError> {
        let body = json!({"model": self.config.model, "input": text});
        let deadline = Instant::now() + self.timeout;
        let reply = crate::gateway::remote_post_json(&self.client, &self.config, "embeddings", &body, deadline)
            .map_err(|e| MemoryError::Provider(format!("{e} (endpoint from {ENV_API_BASE})")))?;
        let values: Vec<f64> = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| MemoryError::Provider("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or(MemoryError::NonFinite))
            .collect::<Result<_, _>>()?;
        let v = EmbeddingVector::new(values)?;
        if v.dim() != self.dim {
            return Err(MemoryError::DimMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        Ok(v.normalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embeddings_are_deterministic_unit_vectors() {
        let p = HashEmbedder::new(16);
        let a = p.embed("abc").unwrap();
        assert_eq!(a, p.embed("abc").unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((p.embed("").unwrap().norm() - 1.0).abs() < 1e-12);
    }

    /// Independent re-derivation of the documented hashing scheme.
    fn oracle(text: &str, dim: usize) -> Vec<f64> {
        fn fnv(s: &str) -> u64 {
            s.bytes().fold(14695981039346656037u64, |h, b| (h ^ b as u64).wrapping_mul(1099511628211))
        }
        let lowered = text.to_lowercase();
        let wrapped: Vec<char> = std::iter::once('^').chain(lowered.chars()).chain(std::iter::once('$')).collect();
        let mut feats: Vec<String> = (0..wrapped.len().saturating_sub(2))
            .map(|i| wrapped[i..i + 3].iter().collect())
            .collect();
        feats.extend(lowered.split_whitespace().map(|w| format!("w:{w}")));
        let mut v = vec![0.0; dim];
        for f in feats {
            let h = fnv(&f);
            v[(h % dim as u64) as usize] += if h >= 1 << 63 { -1.0 } else { 1.0 };
        }
        let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn near_strings_differ_and_match_oracle() {
        let p = HashEmbedder::new(16);
        let abc = p.embed("abc").unwrap();
        let abd = p.embed("abd").unwrap();
        assert_eq!(abc.values(), oracle("abc", 16).as_slice());
        assert_eq!(abd.values(), oracle("abd", 16).as_slice());
        assert!(abc.cosine(&abd).unwrap() < 1.0);
    }

    #[test]
    fn cosine_checks_dimensions() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(a.cosine(&b), Err(MemoryError::DimMismatch { expected: 2, got: 3 })));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn table_round_trip_and_miss() {
        let mut t = TableEmbedder::new("table-test", 2);
        t.insert("hello", EmbeddingVector::new(vec![0.6, 0.8]).unwrap()).unwrap();
        let back = TableEmbedder::from_json(&t.to_json()).unwrap();
        assert_eq!(back.embed("hello").unwrap().values(), &[0.6, 0.8]);
        assert!(matches!(back.embed("other"), Err(MemoryError::Provider(_))));
        assert_eq!(TableEmbedder::key("hello").len(), 16);
    }
}
