use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendKind, CompletionRequest, CompletionResponse, TokenLogprob, TopLogprob};
use super::{ENV_KEY, ENV_URL};
use crate::error::GatewayError;

const MAX_ATTEMPTS: u32 = 3;
const TOP_LOGPROBS: u32 = 5;

#[derive(Clone, Debug)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub initial_backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            initial_backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        let base_url = std::env::var(ENV_URL).map_err(|_| GatewayError::NotConfigured(format!("{ENV_URL} is not set")))?;
        let mut cfg = Self::new(base_url);
        cfg.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::NotConfigured(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, String)> {
        let mut rb = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.cfg.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            let text = resp.text().unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {text}")));
        }
        resp.json::<Value>().map_err(|e| (false, format!("body is not JSON: {e}")))
    }
}

pub(crate) fn request_body(req: &CompletionRequest) -> Value {
    let mut body = json!({
        "model": req.model_id,
        "messages": req.messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if req.want_logprobs {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(TOP_LOGPROBS);
    }
    if let Some(seed) = req.sample {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn parse_response(v: &Value, want_logprobs: bool) -> Result<CompletionResponse, GatewayError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Parse("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Parse("missing choices[0].message.content".into()))?
        .to_string();
    let token_logprobs = if want_logprobs {
        choice.pointer("/logprobs/content").and_then(Value::as_array).map(|items| {
            items
                .iter()
                .filter_map(|item| {
                    let token = item.get("token")?.as_str()?.to_string();
                    let logprob = item.get("logprob")?.as_f64()?;
                    let top_logprobs = item
                        .get("top_logprobs")
                        .and_then(Value::as_array)
                        .map(|alts| {
                            alts.iter()
                                .filter_map(|a| {
                                    Some(TopLogprob {
                                        token: a.get("token")?.as_str()?.to_string(),
                                        logprob: a.get("logprob")?.as_f64()?,
                                    })
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    Some(TokenLogprob {
                        token,
                        logprob,
                        top_logprobs,
                    })
                })
                .collect()
        })
    } else {
        None
    };
    Ok(CompletionResponse {
        text,
        token_logprobs,
        backend: BackendKind::LiveHttp,
    })
}

impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let body = request_body(req);
        let mut backoff = self.cfg.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.attempt(&body) {
                Ok(v) => return parse_response(&v, req.want_logprobs),
                Err((retryable, msg)) => {
                    last = msg;
                    if !retryable {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message: last,
                        });
                    }
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: MAX_ATTEMPTS,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Message;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) pairs on successive connections.
    fn serve(replies: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let len = text[..head_end]
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if buf.len() >= head_end + 4 + len {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1")
    }

    fn ok_body() -> String {
        json!({"choices":[{"message":{"role":"assistant","content":"A. True"},
            "logprobs":{"content":[{"token":"A","logprob":-0.2,"top_logprobs":[{"token":"A","logprob":-0.2},{"token":"B","logprob":-1.7}]}]}}]})
        .to_string()
    }

    fn backend(url: String) -> HttpBackend {
        let mut cfg = HttpConfig::new(url);
        cfg.initial_backoff = Duration::from_millis(5);
        HttpBackend::new(cfg).unwrap()
    }

    #[test]
    fn parses_logprobs() {
        let b = backend(serve(vec![(200, ok_body())]));
        let req = CompletionRequest::new("m", vec![Message::user("q")]).logprobs(true);
        let r = b.complete(&req).unwrap();
        assert_eq!(r.text, "A. True");
        assert_eq!(r.backend, BackendKind::LiveHttp);
        assert_eq!(r.token_logprobs.unwrap()[0].top_logprobs.len(), 2);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let b = backend(serve(vec![(500, "{}".into()), (503, "{}".into()), (200, ok_body())]));
        let req = CompletionRequest::new("m", vec![Message::user("q")]);
        assert_eq!(b.complete(&req).unwrap().text, "A. True");
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let b = backend(serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]));
        let req = CompletionRequest::new("m", vec![Message::user("q")]);
        match b.complete(&req) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_body_is_parse_error() {
        let b = backend(serve(vec![(200, json!({"nope": 1}).to_string())]));
        let req = CompletionRequest::new("m", vec![Message::user("q")]);
        assert!(matches!(b.complete(&req), Err(GatewayError::Parse(_))));
    }

    #[test]
    fn request_body_carries_logprob_fields() {
        let req = CompletionRequest::new("m", vec![Message::user("q")]).logprobs(true).sample(3);
        let body = request_body(&req);
        assert_eq!(body["top_logprobs"], 5);
        assert_eq!(body["seed"], 3);
        assert_eq!(body["messages"][0]["role"], "user");
    }
}
