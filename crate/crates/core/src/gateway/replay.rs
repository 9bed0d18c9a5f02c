use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, CompletionRequest, CompletionResponse};
use crate::error::GatewayError;

/// One line of a replay cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub key: String,
    pub request: serde_json::Value,
    pub response: CompletionResponse,
}

impl ReplayRecord {
    pub fn new(req: &CompletionRequest, response: CompletionResponse) -> Self {
        Self {
            key: req.cache_key(),
            request: serde_json::from_str(&req.canonical_json()).expect("canonical json parses"),
            response,
        }
    }

    /// Single JSONL line, without the trailing newline.
    pub fn to_line(&self) -> String {
        let mut line = String::from("{\"key\":");
        line.push_str(&serde_json::to_string(&self.key).expect("key"));
        line.push_str(",\"request\":");
        line.push_str(&serde_json::to_string(&self.request).expect("request"));
        line.push_str(",\"response\":");
        line.push_str(&serde_json::to_string(&self.response).expect("response"));
        line.push('}');
        line
    }
}

/// Serves responses from a JSONL cache; misses fail closed.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, CompletionResponse>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path)?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
            // later records win, so re-recorded entries supersede older ones
            entries.insert(record.key, record.response);
        }
        Ok(Self { entries })
    }

    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        Self {
            entries: records.into_iter().map(|r| (r.key, r.response)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let key = req.cache_key();
        let mut resp = self.entries.get(&key).cloned().ok_or(GatewayError::CacheMiss(key))?;
        resp.backend = BackendKind::Replay;
        Ok(resp)
    }
}

/// Forwards to an inner backend and appends every exchange to a cache file.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let resp = self.inner.complete(req)?;
        let line = ReplayRecord::new(req, resp.clone()).to_line();
        let mut f = self.file.lock().expect("replay file lock");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(resp)
    }
}
