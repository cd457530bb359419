//! Chat-completion clients: live HTTP, transcript replay, and canned replies.
//!
//! Live protocol: `POST /chat` with `{"model": "...", "messages": [...]}`,
//! answered by `{"content": "..."}`.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatRole, ChatTurn, TaxgenError};

pub trait ChatClient {
    /// Returns the assistant reply to `messages`.
    fn complete(&self, messages: &[ChatTurn]) -> Result<String, TaxgenError>;

    /// Model id recorded into taxonomy provenance.
    fn model_id(&self) -> String;
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatTurn],
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

pub struct HttpChatClient {
    url: String,
    model: String,
    temperature: Option<f64>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, model: &str, temperature: Option<f64>) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat") {
            base.to_string()
        } else {
            format!("{base}/chat")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        HttpChatClient {
            url,
            model: model.to_string(),
            temperature,
            agent,
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatTurn]) -> Result<String, TaxgenError> {
        let request = ChatRequest {
            model: &self.model,
            messages,
            temperature: self.temperature,
        };
        let err = |e: ureq::Error| TaxgenError::Client(format!("{}: {e}", self.url));
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&request)
            .map_err(err)?;
        Ok(resp
            .body_mut()
            .read_json::<ChatResponse>()
            .map_err(err)?
            .content)
    }

    fn model_id(&self) -> String {
        self.model.clone()
    }
}

/// Replays a recorded transcript. Every request must reproduce the recorded
/// conversation prefix exactly; the reply is the recorded assistant turn that
/// follows it.
pub struct ReplayClient {
    transcript: Vec<ChatTurn>,
    model: String,
}

impl ReplayClient {
    pub fn new(transcript: Vec<ChatTurn>) -> Self {
        ReplayClient {
            transcript,
            model: "replay".into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TaxgenError> {
        let transcript: Vec<ChatTurn> = serde_json::from_str(text)
            .map_err(|e| TaxgenError::Client(format!("transcript: {e}")))?;
        Ok(ReplayClient::new(transcript))
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, messages: &[ChatTurn]) -> Result<String, TaxgenError> {
        let n = messages.len();
        if let Some(i) = (0..n).find(|&i| self.transcript.get(i) != Some(&messages[i])) {
            return Err(TaxgenError::ReplayMismatch {
                turn: i,
                expected: self
                    .transcript
                    .get(i)
                    .map(|t| t.content.clone())
                    .unwrap_or_else(|| "<end of transcript>".into()),
                actual: messages[i].content.clone(),
            });
        }
        match self.transcript.get(n) {
            Some(t) if t.role == ChatRole::Assistant => Ok(t.content.clone()),
            _ => Err(TaxgenError::ReplayMismatch {
                turn: n,
                expected: "<assistant turn>".into(),
                actual: "<request>".into(),
            }),
        }
    }

    fn model_id(&self) -> String {
        self.model.clone()
    }
}

/// Answers with canned replies in order, ignoring the request. Used to build
/// transcripts offline.
pub struct ScriptedClient {
    replies: Mutex<std::vec::IntoIter<String>>,
    model: String,
}

impl ScriptedClient {
    pub fn new<I: IntoIterator<Item = String>>(replies: I) -> Self {
        ScriptedClient {
            replies: Mutex::new(replies.into_iter().collect::<Vec<_>>().into_iter()),
            model: "scripted".into(),
        }
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, _messages: &[ChatTurn]) -> Result<String, TaxgenError> {
        self.replies
            .lock()
            .expect("script lock")
            .next()
            .ok_or_else(|| TaxgenError::Client("script exhausted".into()))
    }

    fn model_id(&self) -> String {
        self.model.clone()
    }
}
