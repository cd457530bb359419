use std::hash::Hasher;

use twox_hash::XxHash64;

use super::{EmbeddingError, EmbeddingProvider, EmbeddingVector};

pub(super) const MODEL_ID: &str = "char3-xxh64";

const BUCKET_SEED: u64 = 0x5454_4c5f_4255_434b;
const SIGN_SEED: u64 = 0x5454_4c5f_5349_474e;

/// Feature-hashing embedder over character trigrams.
///
/// The text (already normalized) is padded with one space on each side so
/// word boundaries contribute grams and every non-empty text has at least one.
/// Each trigram adds ±1 to one of `dim` buckets; the result is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashProvider {
    dim: usize,
}

impl HashProvider {
    pub fn new(dim: usize) -> Self {
        HashProvider { dim }
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText { index: 0 });
        }
        let mut padded = Vec::with_capacity(text.len() + 2);
        padded.push(' ');
        padded.extend(text.chars());
        padded.push(' ');

        let mut values = vec![0f32; self.dim];
        let mut buf = [0u8; 12];
        for gram in padded.windows(3) {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let bytes = &buf[..len];
            let bucket = (hash(bytes, BUCKET_SEED) % self.dim as u64) as usize;
            let sign = if hash(bytes, SIGN_SEED) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            values[bucket] += sign;
        }

        if values.iter().all(|v| *v == 0.0) {
            // Every gram cancelled out; fall back to a single whole-text bucket.
            let bucket = (hash(text.as_bytes(), BUCKET_SEED) % self.dim as u64) as usize;
            values[bucket] = 1.0;
        }
        EmbeddingVector::normalized(values)
    }
}

fn hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = XxHash64::with_seed(seed);
    h.write(bytes);
    h.finish()
}

impl EmbeddingProvider for HashProvider {
    fn provider_id(&self) -> &str {
        "deterministic-hash"
    }

    fn model_id(&self) -> &str {
        MODEL_ID
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}
