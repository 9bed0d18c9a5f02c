use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use actgate_core::config::{BackendSpec, QuotaName, QuotaSetting};
use actgate_core::detectors::{DetectorConfig, DetectorKind};
use actgate_core::ConfigError;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Actor,
    Reviewer,
    Admin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenEntry {
    pub token: String,
    pub role: Role,
}

fn default_detector() -> DetectorConfig {
    DetectorConfig::new(DetectorKind::InferactVerb)
}

fn default_long_poll_ms() -> u64 {
    25_000
}

/// Server settings, read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Static bearer tokens.
    pub tokens: Vec<TokenEntry>,
    /// Needed for LLM detectors; gate checks with `oracle` run without it.
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    /// Used when a gate check names no detector.
    #[serde(default = "default_detector")]
    pub detector: DetectorConfig,
    /// Reviews allowed before the quota is reset; absent means unlimited.
    #[serde(default)]
    pub quota: Option<QuotaSetting>,
    #[serde(default)]
    pub proceed_on_expiry: bool,
    #[serde(default)]
    pub event_log: Option<PathBuf>,
    /// Directory scanned for the newest `*.json` metrics report.
    #[serde(default)]
    pub reports_dir: Option<PathBuf>,
    /// Upper bound on how long `/v1/alerts/stream` waits for a change.
    #[serde(default = "default_long_poll_ms")]
    pub long_poll_ms: u64,
}

impl ServiceConfig {
    /// Minimal config with the given tokens and everything else defaulted.
    pub fn with_tokens(tokens: &[(&str, Role)]) -> Self {
        Self {
            tokens: tokens
                .iter()
                .map(|(t, r)| TokenEntry {
                    token: t.to_string(),
                    role: *r,
                })
                .collect(),
            backend: None,
            model: None,
            prompts: None,
            detector: default_detector(),
            quota: None,
            proceed_on_expiry: false,
            event_log: None,
            reports_dir: None,
            long_poll_ms: default_long_poll_ms(),
        }
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.prompts, &mut self.event_log, &mut self.reports_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(b) = self.backend.as_mut() {
            *b = b.relative_to(base);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tokens.is_empty() {
            return Err(ConfigError::invalid("tokens", "at least one token is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if t.token.trim().is_empty() {
                return Err(ConfigError::invalid(format!("tokens[{i}].token"), "must not be empty"));
            }
            if !seen.insert(&t.token) {
                return Err(ConfigError::invalid(format!("tokens[{i}].token"), "duplicate token"));
            }
        }
        self.detector
            .validate()
            .map_err(|e| ConfigError::invalid("detector", e.to_string()))?;
        if self.detector.kind != DetectorKind::Oracle && self.backend.is_none() {
            return Err(ConfigError::invalid("backend", format!("the `{}` detector needs a backend", self.detector.kind)));
        }
        if self.long_poll_ms == 0 {
            return Err(ConfigError::invalid("long_poll_ms", "must be positive"));
        }
        Ok(())
    }

    /// Review capacity for the first quota period.
    pub fn capacity(&self) -> usize {
        match self.quota {
            Some(QuotaSetting::Count(n)) => n,
            Some(QuotaSetting::Named(QuotaName::Unlimited)) | None => usize::MAX,
        }
    }
}
