//! Remote embedding provider speaking `POST /embed`.
//!
//! Request: `{"model": "<model_id>", "texts": [...]}`.
//! Response: `{"vectors": [[f, ...], ...]}` in request order. Any non-200
//! status or transport failure surfaces as `ProviderUnavailable`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingProvider, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
}

/// Moves one embed request over the wire (or replays it).
pub trait EmbedTransport: Send + Sync {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, EmbeddingError>;
}

pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &str) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/embed") {
            base.to_string()
        } else {
            format!("{base}/embed")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpTransport { url, agent }
    }
}

impl EmbedTransport for HttpTransport {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, EmbeddingError> {
        let unavailable =
            |e: ureq::Error| EmbeddingError::ProviderUnavailable(format!("{}: {e}", self.url));
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(unavailable)?;
        resp.body_mut()
            .read_json::<EmbedResponse>()
            .map_err(unavailable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub request: EmbedRequest,
    pub response: EmbedResponse,
}

/// Replays recorded request/response pairs; unknown requests fail as if the
/// server were down.
#[derive(Debug, Clone, Default)]
pub struct FixtureTransport {
    exchanges: Vec<RecordedExchange>,
}

impl FixtureTransport {
    pub fn new(exchanges: Vec<RecordedExchange>) -> Self {
        FixtureTransport { exchanges }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(FixtureTransport::new(serde_json::from_str(text)?))
    }
}

impl EmbedTransport for FixtureTransport {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, EmbeddingError> {
        self.exchanges
            .iter()
            .find(|x| &x.request == request)
            .map(|x| x.response.clone())
            .ok_or_else(|| {
                EmbeddingError::ProviderUnavailable("no recorded response for request".into())
            })
    }
}

pub struct RemoteProvider {
    transport: Box<dyn EmbedTransport>,
    model_id: String,
    dim: usize,
    requests: AtomicUsize,
}

impl RemoteProvider {
    pub fn new(transport: Box<dyn EmbedTransport>, model_id: &str, dim: usize) -> Self {
        RemoteProvider {
            transport,
            model_id: model_id.to_string(),
            dim,
            requests: AtomicUsize::new(0),
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn provider_id(&self) -> &str {
        "remote"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let request = EmbedRequest {
            model: self.model_id.clone(),
            texts: texts.to_vec(),
        };
        let response = self.transport.embed(&request)?;
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: texts.len(),
                actual: response.vectors.len(),
            });
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dim,
                        actual: v.len(),
                    });
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}
