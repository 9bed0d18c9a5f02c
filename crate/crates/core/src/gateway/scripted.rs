use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{Backend, BackendKind, CompletionRequest, CompletionResponse, TokenLogprob};
use crate::error::GatewayError;

/// Canned reply for a scripted rule.
#[derive(Clone, Debug, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

/// Regex over the concatenated prompt → replies served in order; the last
/// reply repeats once the sequence is exhausted.
pub struct ScriptRule {
    pattern: Regex,
    replies: Vec<ScriptedReply>,
    served: usize,
}

#[derive(Deserialize)]
struct RuleFile {
    pattern: String,
    responses: Vec<ScriptedReply>,
}

/// Control-flow test backend. Rules are tried in insertion order.
#[derive(Default)]
pub struct ScriptedBackend {
    rules: Mutex<Vec<ScriptRule>>,
    log: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(self, pattern: &str, text: &str) -> Self {
        self.rule_seq(pattern, &[text])
    }

    pub fn rule_seq(self, pattern: &str, texts: &[&str]) -> Self {
        let replies = texts
            .iter()
            .map(|t| ScriptedReply {
                text: t.to_string(),
                logprobs: None,
            })
            .collect();
        self.push(pattern, replies)
    }

    pub fn rule_logprobs(self, pattern: &str, text: &str, logprobs: Vec<TokenLogprob>) -> Self {
        self.push(
            pattern,
            vec![ScriptedReply {
                text: text.to_string(),
                logprobs: Some(logprobs),
            }],
        )
    }

    fn push(self, pattern: &str, replies: Vec<ScriptedReply>) -> Self {
        assert!(!replies.is_empty(), "scripted rule needs at least one reply");
        self.rules.lock().expect("rules").push(ScriptRule {
            pattern: Regex::new(pattern).expect("valid script pattern"),
            replies,
            served: 0,
        });
        self
    }

    /// Loads `[{"pattern": "...", "responses": [{"text": "...", "logprobs": [...]}]}]`.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        let rules: Vec<RuleFile> =
            serde_json::from_str(&text).map_err(|e| GatewayError::Parse(format!("{}: {e}", path.display())))?;
        let mut backend = Self::new();
        for r in rules {
            Regex::new(&r.pattern).map_err(|e| GatewayError::Parse(format!("pattern {:?}: {e}", r.pattern)))?;
            if r.responses.is_empty() {
                return Err(GatewayError::Parse(format!("pattern {:?} has no responses", r.pattern)));
            }
            backend = backend.push(&r.pattern, r.responses);
        }
        Ok(backend)
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("log").clone()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.log.lock().expect("log").push(req.clone());
        let prompt = req.prompt_text();
        let mut rules = self.rules.lock().expect("rules");
        let rule = rules.iter_mut().find(|r| r.pattern.is_match(&prompt)).ok_or(GatewayError::NoScript)?;
        let reply = rule.replies[rule.served.min(rule.replies.len() - 1)].clone();
        rule.served += 1;
        Ok(CompletionResponse {
            text: reply.text,
            token_logprobs: reply.logprobs,
            backend: BackendKind::Scripted,
        })
    }
}
