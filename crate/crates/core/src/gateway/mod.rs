//! Chat-completion access: a uniform [`Backend`] trait with live HTTP,
//! replay/record and scripted implementations.

mod http;
mod logprob;
mod replay;
mod scripted;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::{HttpBackend, HttpConfig};
pub use logprob::{choice_probability, verbalized_choice};
pub use replay::{RecordingBackend, ReplayBackend, ReplayRecord};
pub use scripted::{ScriptRule, ScriptedBackend};

use crate::error::GatewayError;

pub const ENV_URL: &str = "ACTGATE_LLM_URL";
pub const ENV_KEY: &str = "ACTGATE_LLM_KEY";
pub const ENV_MODEL: &str = "ACTGATE_LLM_MODEL";

/// Default sampling temperature for single-shot detector calls.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
/// Sampling temperature for self-consistency votes.
pub const SELF_CONSISTENCY_TEMPERATURE: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub want_logprobs: bool,
    pub max_tokens: u32,
    /// Distinguishes repeated samples of an otherwise identical request
    /// (self-consistency votes). Sent to live backends as `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<u32>,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            want_logprobs: false,
            max_tokens: 512,
            sample: None,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn logprobs(mut self, want: bool) -> Self {
        self.want_logprobs = want;
        self
    }

    pub fn sample(mut self, sample: u32) -> Self {
        self.sample = Some(sample);
        self
    }

    /// All message contents joined by newlines; what scripted rules match.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// Canonical encoding: JSON with lexicographically sorted keys over
    /// (model_id, messages, temperature, want_logprobs[, sample]).
    pub fn canonical_json(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("messages", serde_json::to_value(&self.messages).expect("messages"));
        map.insert("model_id", serde_json::Value::from(self.model_id.clone()));
        map.insert("temperature", serde_json::Value::from(self.temperature));
        map.insert("want_logprobs", serde_json::Value::from(self.want_logprobs));
        if let Some(s) = self.sample {
            map.insert("sample", serde_json::Value::from(s));
        }
        let mut out = String::new();
        write_sorted(&serde_json::to_value(map).expect("map"), &mut out);
        out
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn cache_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn write_sorted(v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key"));
                out.push(':');
                write_sorted(&map[k], out);
            }
            out.push('}');
        }
        serde_json::Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_sorted(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

impl TokenLogprob {
    pub fn new(token: &str, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
            top_logprobs: vec![TopLogprob {
                token: token.into(),
                logprob,
            }],
        }
    }

    /// A sampled token with explicit top alternatives; the first
    /// alternative is the sampled token.
    pub fn with_alternatives(alternatives: &[(&str, f64)]) -> Self {
        let (token, logprob) = alternatives[0];
        Self {
            token: token.into(),
            logprob,
            top_logprobs: alternatives
                .iter()
                .map(|(t, lp)| TopLogprob {
                    token: t.to_string(),
                    logprob: *lp,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LiveHttp,
    Replay,
    Scripted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub backend: BackendKind,
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(req)
    }
}

/// Shared handle over a backend that counts calls and fixes the model id.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    model_id: String,
    calls: Arc<AtomicU64>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, model_id: impl Into<String>) -> Self {
        Self {
            backend,
            model_id: model_id.into(),
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn request(&self, messages: Vec<Message>) -> CompletionRequest {
        CompletionRequest::new(self.model_id.clone(), messages)
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let resp = self.backend.complete(req)?;
        if !req.want_logprobs {
            return Ok(CompletionResponse {
                token_logprobs: None,
                ..resp
            });
        }
        Ok(resp)
    }
}
