//! Text embeddings: normalization, pluggable providers, caching and cosine
//! similarity.

mod cache;
mod hash;
mod remote;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use cache::{CacheKey, EmbeddingCache};
pub use hash::HashProvider;
pub use remote::{
    EmbedTransport, FixtureTransport, HttpTransport, RecordedExchange, RemoteProvider,
};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("text #{index} is empty after normalization")]
    EmptyText { index: usize },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("provider returned {actual} vectors for {expected} texts")]
    CountMismatch { expected: usize, actual: usize },
    #[error("provider returned a zero vector")]
    ZeroVector,
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding cache: {0}")]
    Cache(#[from] std::io::Error),
}

/// Unicode NFC, whitespace runs collapsed to one space, trimmed, lowercased.
pub fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let collapsed = composed.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.to_lowercase().nfc().collect()
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalizes `values`; zero vectors are rejected.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(EmbeddingVector(
            values
                .into_iter()
                .map(|v| (f64::from(v) / norm) as f32)
                .collect(),
        ))
    }

    /// Wraps values that are already unit length (e.g. read back from cache).
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies every component by `factor` without renormalizing.
    pub fn scaled(&self, factor: f32) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    DeterministicHash,
    Remote,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::DeterministicHash => "deterministic-hash",
            ProviderKind::Remote => "remote",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic-hash" | "hash" => Ok(ProviderKind::DeterministicHash),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    pub model_id: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub batch_size: usize,
    /// Upper bound on concurrent remote requests.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    4
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::deterministic(256)
    }
}

impl ProviderConfig {
    pub fn deterministic(dim: usize) -> Self {
        ProviderConfig {
            provider: ProviderKind::DeterministicHash,
            model_id: hash::MODEL_ID.to_string(),
            dim,
            endpoint: None,
            batch_size: 64,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn remote(endpoint: impl Into<String>, model_id: impl Into<String>, dim: usize) -> Self {
        ProviderConfig {
            provider: ProviderKind::Remote,
            model_id: model_id.into(),
            dim,
            endpoint: Some(endpoint.into()),
            batch_size: 32,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be positive");
        }
        match (self.provider, &self.endpoint) {
            (ProviderKind::DeterministicHash, Some(_)) => {
                bad("deterministic-hash provider takes no endpoint")
            }
            (ProviderKind::Remote, None) => bad("remote provider requires an endpoint"),
            _ => Ok(()),
        }
    }
}

/// Source of raw embeddings for already-normalized texts.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Embeds one batch; output order follows `texts`.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
    /// Number of outbound requests made so far (zero for local providers).
    fn request_count(&self) -> usize {
        0
    }
}

/// Provider plus cache: the entry point the rest of the pipeline uses.
pub struct Embedder {
    config: ProviderConfig,
    provider: Arc<dyn EmbeddingProvider>,
    cache: EmbeddingCache,
}

impl fmt::Debug for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Embedder")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Embedder {
    pub fn new(config: ProviderConfig) -> Result<Embedder, EmbeddingError> {
        config.validate()?;
        let provider: Arc<dyn EmbeddingProvider> = match config.provider {
            ProviderKind::DeterministicHash => Arc::new(HashProvider::new(config.dim)),
            ProviderKind::Remote => {
                let endpoint = config.endpoint.clone().unwrap_or_default();
                Arc::new(RemoteProvider::new(
                    Box::new(HttpTransport::new(&endpoint)),
                    &config.model_id,
                    config.dim,
                ))
            }
        };
        Ok(Embedder::with_provider(config, provider))
    }

    pub fn with_provider(config: ProviderConfig, provider: Arc<dyn EmbeddingProvider>) -> Embedder {
        let cache = EmbeddingCache::in_memory(provider.provider_id(), provider.model_id());
        Embedder {
            config,
            provider,
            cache,
        }
    }

    /// Backs the cache with an append-only file under `dir`.
    pub fn with_cache_dir(mut self, dir: &Path) -> Result<Embedder, EmbeddingError> {
        self.cache =
            EmbeddingCache::open(dir, self.provider.provider_id(), self.provider.model_id())?;
        Ok(self)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn provider_requests(&self) -> usize {
        self.provider.request_count()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    /// Embeds `texts` in order. Each text is normalized first; texts already
    /// in the cache are never sent to the provider.
    pub fn embed_texts<S: AsRef<str>>(
        &self,
        texts: &[S],
    ) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let normalized: Vec<String> = texts.iter().map(|t| normalize_text(t.as_ref())).collect();
        if let Some(index) = normalized.iter().position(String::is_empty) {
            return Err(EmbeddingError::EmptyText { index });
        }
        let keys: Vec<CacheKey> = normalized.iter().map(|t| self.cache.key(t)).collect();

        let mut misses: Vec<String> = Vec::new();
        let mut miss_keys: Vec<CacheKey> = Vec::new();
        let mut queued = std::collections::HashSet::new();
        for (text, key) in normalized.iter().zip(&keys) {
            if self.cache.get(key).is_none() && queued.insert(key.clone()) {
                misses.push(text.clone());
                miss_keys.push(key.clone());
            }
        }

        if !misses.is_empty() {
            let fresh = self.fetch(&misses)?;
            for (key, vector) in miss_keys.into_iter().zip(fresh) {
                self.cache.insert(key, vector)?;
            }
        }

        keys.iter()
            .map(|k| {
                self.cache.get(k).ok_or_else(|| {
                    EmbeddingError::ProviderUnavailable("cache lost an entry".into())
                })
            })
            .collect()
    }

    fn fetch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let batches: Vec<&[String]> = texts.chunks(self.config.batch_size).collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.config.max_in_flight) {
            let results: Vec<Result<Vec<EmbeddingVector>, EmbeddingError>> = if wave.len() == 1 {
                vec![self.provider.embed_batch(wave[0])]
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|batch| s.spawn(|| self.provider.embed_batch(batch)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("embedding worker panicked"))
                        .collect()
                })
            };
            for (batch, result) in wave.iter().zip(results) {
                let vectors = result?;
                if vectors.len() != batch.len() {
                    return Err(EmbeddingError::CountMismatch {
                        expected: batch.len(),
                        actual: vectors.len(),
                    });
                }
                for v in &vectors {
                    if v.dim() != self.config.dim {
                        return Err(EmbeddingError::DimensionMismatch {
                            expected: self.config.dim,
                            actual: v.dim(),
                        });
                    }
                }
                out.extend(vectors);
            }
        }
        Ok(out)
    }
}

/// One-shot helper: builds an [`Embedder`] for `config` and embeds `texts`.
pub fn embed_texts<S: AsRef<str>>(
    config: &ProviderConfig,
    texts: &[S],
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if texts.is_empty() {
        return Err(EmbeddingError::InvalidConfig("no texts to embed".into()));
    }
    Embedder::new(config.clone())?.embed_texts(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn normalize_rules() {
        assert_eq!(normalize_text("  Voice   CALL "), "voice call");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("\tA\n\nb "), "a b");
    }

    #[test]
    fn normalize_canonical_equivalence() {
        let composed = "Caf\u{e9} Cr\u{e8}me \u{c5}ngstr\u{f6}m";
        let decomposed = "Cafe\u{301} Cre\u{300}me A\u{30a}ngstro\u{308}m";
        assert_ne!(composed, decomposed);
        let a = normalize_text(composed);
        let b = normalize_text(decomposed);
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert_eq!(
            a.chars().collect::<Vec<_>>(),
            "caf\u{e9} cr\u{e8}me \u{e5}ngstr\u{f6}m"
                .chars()
                .collect::<Vec<_>>()
        );
    }

    fn unit(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let v = unit(&[0.3, -1.2, 4.0, 0.5]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-9);
        let e1 = unit(&[1.0, 0.0, 0.0]);
        let e2 = unit(&[0.0, 1.0, 0.0]);
        assert!(cosine(&e1, &e2).unwrap().abs() < 1e-9);
        assert!(matches!(
            cosine(&e1, &unit(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    /// Straight-line oracle with compensated summation over the raw values.
    fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
        fn kahan(it: impl Iterator<Item = f64>) -> f64 {
            let (mut sum, mut c) = (0.0f64, 0.0f64);
            for x in it {
                let y = x - c;
                let t = sum + y;
                c = (t - sum) - y;
                sum = t;
            }
            sum
        }
        let dot = kahan(a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)));
        let na = kahan(a.iter().map(|&x| f64::from(x) * f64::from(x))).sqrt();
        let nb = kahan(b.iter().map(|&x| f64::from(x) * f64::from(x))).sqrt();
        dot / (na * nb)
    }

    #[test]
    fn cosine_matches_oracle_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let a: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (ua, ub) = (unit(&a), unit(&b));
            let got = cosine(&ua, &ub).unwrap();
            assert!((got - oracle_cosine(ua.values(), ub.values())).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::deterministic(64).validate().is_ok());
        let mut cfg = ProviderConfig::deterministic(64);
        cfg.endpoint = Some("http://x".into());
        assert!(cfg.validate().is_err());
        let mut cfg = ProviderConfig::remote("http://x", "m", 8);
        assert!(cfg.validate().is_ok());
        cfg.endpoint = None;
        assert!(cfg.validate().is_err());
        assert!(ProviderConfig::deterministic(0).validate().is_err());
    }

    #[test]
    fn embed_texts_rejects_empty() {
        let cfg = ProviderConfig::deterministic(64);
        assert!(matches!(
            embed_texts(&cfg, &["ok", "   "]),
            Err(EmbeddingError::EmptyText { index: 1 })
        ));
    }

    #[test]
    fn deterministic_duplicates_identical() {
        let v = embed_texts(
            &ProviderConfig::deterministic(64),
            &["voice call", "voice call"],
        )
        .unwrap();
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn three_texts_unit_norm_and_bounded_cosine() {
        let texts = ["voice call", "subscriber", "online charging function"];
        let v = embed_texts(&ProviderConfig::deterministic(64), &texts).unwrap();
        assert_eq!(v.len(), 3);
        for x in &v {
            assert_eq!(x.dim(), 64);
            let norm: f64 = x
                .values()
                .iter()
                .map(|&c| f64::from(c).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        for i in 0..3 {
            for j in 0..3 {
                let c = cosine(&v[i], &v[j]).unwrap();
                assert!((-1.0..=1.0).contains(&c));
                assert!((c - oracle_cosine(v[i].values(), v[j].values())).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn cosine_symmetric(a in proptest::collection::vec(-10.0f32..10.0, 16),
                            b in proptest::collection::vec(-10.0f32..10.0, 16)) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let (ua, ub) = (unit(&a), unit(&b));
            prop_assert_eq!(cosine(&ua, &ub).unwrap(), cosine(&ub, &ua).unwrap());
            prop_assert!((cosine(&ua, &ua).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
