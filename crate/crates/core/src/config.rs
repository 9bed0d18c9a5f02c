//! Run configuration: backend selection, evaluation runs and loop
//! simulations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_DEV_SIZE;
use crate::detectors::{Aggregation, DetectorConfig, DetectorKind, ProbCombine, Variant};
use crate::error::{ConfigError, GatewayError};
use crate::gateway::{Backend, HttpBackend, HttpConfig, RecordingBackend, ReplayBackend, ScriptedBackend, ENV_MODEL};
use crate::metrics::DEFAULT_ECE_BINS;
use crate::model::CriticalActionRule;
use crate::orchestrator::FeedbackKind;

/// Model id used when neither the configuration nor the environment names
/// one.
pub const DEFAULT_MODEL: &str = "gpt-4-turbo";

/// Explicit model id, else `ACTGATE_LLM_MODEL`, else [`DEFAULT_MODEL`].
pub fn resolve_model(explicit: Option<&str>) -> String {
    explicit
        .map(str::to_string)
        .or_else(|| std::env::var(ENV_MODEL).ok().filter(|m| !m.is_empty()))
        .unwrap_or_else(|| DEFAULT_MODEL.to_string())
}

/// Where completions come from: `live`, `replay:PATH`, `scripted:PATH` or
/// `record:PATH` (live, appending every exchange to a replay cache).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Live,
    Replay(PathBuf),
    Scripted(PathBuf),
    Record(PathBuf),
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn Backend>, GatewayError> {
        Ok(match self {
            BackendSpec::Live => Arc::new(HttpBackend::new(HttpConfig::from_env()?)?),
            BackendSpec::Replay(p) => Arc::new(ReplayBackend::open(p)?),
            BackendSpec::Scripted(p) => Arc::new(ScriptedBackend::from_file(p)?),
            BackendSpec::Record(p) => {
                let live: Arc<dyn Backend> = Arc::new(HttpBackend::new(HttpConfig::from_env()?)?);
                Arc::new(RecordingBackend::new(live, p)?)
            }
        })
    }

    /// Resolves a relative path against `base`.
    pub fn relative_to(&self, base: &Path) -> Self {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        match self {
            BackendSpec::Live => BackendSpec::Live,
            BackendSpec::Replay(p) => BackendSpec::Replay(join(p)),
            BackendSpec::Scripted(p) => BackendSpec::Scripted(join(p)),
            BackendSpec::Record(p) => BackendSpec::Record(join(p)),
        }
    }
}

impl FromStr for BackendSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "live" {
            return Ok(BackendSpec::Live);
        }
        let (mode, path) = s
            .split_once(':')
            .ok_or_else(|| ConfigError::invalid("backend", format!("expected live, replay:PATH, scripted:PATH or record:PATH, got `{s}`")))?;
        if path.is_empty() {
            return Err(ConfigError::invalid("backend", format!("{mode} mode needs a cache path")));
        }
        let path = PathBuf::from(path);
        match mode {
            "replay" => Ok(BackendSpec::Replay(path)),
            "scripted" => Ok(BackendSpec::Scripted(path)),
            "record" => Ok(BackendSpec::Record(path)),
            _ => Err(ConfigError::invalid("backend", format!("unknown backend mode `{mode}`"))),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Live => f.write_str("live"),
            BackendSpec::Replay(p) => write!(f, "replay:{}", p.display()),
            BackendSpec::Scripted(p) => write!(f, "scripted:{}", p.display()),
            BackendSpec::Record(p) => write!(f, "record:{}", p.display()),
        }
    }
}

/// Resolves a detector name plus optional variant; `inferact` needs the
/// variant, the suffixed names do not.
pub fn detector_kind(name: &str, variant: Option<Variant>) -> Result<DetectorKind, ConfigError> {
    let kind = match (name, variant) {
        ("inferact", Some(Variant::Verb)) => DetectorKind::InferactVerb,
        ("inferact", Some(Variant::Prob)) => DetectorKind::InferactProb,
        ("inferact", None) => return Err(ConfigError::invalid("variant", "inferact needs variant verb or prob")),
        (other, v) => {
            let kind = DetectorKind::from_str(other).map_err(|e| ConfigError::invalid("detector", e.to_string()))?;
            let implied = match kind {
                DetectorKind::InferactVerb => Some(Variant::Verb),
                DetectorKind::InferactProb => Some(Variant::Prob),
                _ => None,
            };
            if v.is_some() && v != implied {
                return Err(ConfigError::invalid("variant", format!("variant does not apply to `{other}`")));
            }
            kind
        }
    };
    Ok(kind)
}

fn default_dev_size() -> usize {
    DEFAULT_DEV_SIZE
}

fn default_jobs() -> usize {
    1
}

fn default_bins() -> usize {
    DEFAULT_ECE_BINS
}

/// One offline evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub detectors: Vec<DetectorConfig>,
    pub backend: BackendSpec,
    #[serde(default)]
    pub model: Option<String>,
    /// Fit thresholds on a dev split instead of using fixed ones.
    #[serde(default)]
    pub tune: bool,
    #[serde(default = "default_dev_size")]
    pub dev_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    /// Overrides for the built-in prompt templates.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    /// Critical actions; defaults to the benchmark's registry.
    #[serde(default)]
    pub rules: Option<Vec<CriticalActionRule>>,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, detector: DetectorConfig, backend: BackendSpec) -> Self {
        Self {
            corpus: corpus.into(),
            detectors: vec![detector],
            backend,
            model: None,
            tune: false,
            dev_size: DEFAULT_DEV_SIZE,
            seed: 0,
            jobs: 1,
            ece_bins: DEFAULT_ECE_BINS,
            prompts: None,
            rules: None,
        }
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut cfg.corpus);
        if let Some(p) = cfg.prompts.as_mut() {
            join(p);
        }
        cfg.backend = cfg.backend.relative_to(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.detectors.is_empty() {
            return Err(ConfigError::invalid("detectors", "at least one detector is required"));
        }
        for (i, d) in self.detectors.iter().enumerate() {
            d.validate()
                .map_err(|e| ConfigError::invalid(format!("detectors[{i}]"), e.to_string()))?;
            if self.tune && !d.kind.is_scored() {
                return Err(ConfigError::invalid(
                    format!("detectors[{i}]"),
                    format!("`{}` has no score to tune", d.kind),
                ));
            }
            if self.tune && d.threshold.is_some() {
                return Err(ConfigError::invalid(
                    format!("detectors[{i}].threshold"),
                    "a fixed threshold conflicts with tuning",
                ));
            }
        }
        if self.tune && self.dev_size == 0 {
            return Err(ConfigError::invalid("dev_size", "tuning needs a non-empty dev split"));
        }
        if self.jobs == 0 {
            return Err(ConfigError::invalid("jobs", "must be at least 1"));
        }
        if self.ece_bins == 0 {
            return Err(ConfigError::invalid("ece_bins", "must be at least 1"));
        }
        if let Some(rules) = &self.rules {
            if rules.is_empty() {
                return Err(ConfigError::invalid("rules", "must not be empty"));
            }
        }
        Ok(())
    }
}

/// Who reviews held actions in a loop simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Gold-label oracle reviewing detector alerts.
    #[default]
    Simulated,
    /// No detector; the oracle reviews every critical action and failed
    /// trial with unlimited quota.
    FullValidation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    System,
    /// Deterministic timestamps starting at the Unix epoch.
    Logical,
}

/// Inspections per iteration: a count, `"unlimited"`, or the benchmark
/// default when absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuotaSetting {
    Count(usize),
    Named(QuotaName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotaName {
    Unlimited,
}

fn default_iterations() -> u32 {
    3
}

fn default_true() -> bool {
    true
}

/// Loop simulation settings, read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    /// Actor scripts, one JSONL line per task.
    pub tasks: PathBuf,
    #[serde(default = "oracle_name")]
    pub detector: String,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub samples: Option<u32>,
    #[serde(default)]
    pub prob_combine: ProbCombine,
    #[serde(default)]
    pub feedback_kind: FeedbackKind,
    #[serde(default = "default_iterations")]
    pub n_iterations: u32,
    #[serde(default)]
    pub quota: Option<QuotaSetting>,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub proceed_on_expiry: bool,
    #[serde(default = "default_true")]
    pub retry_expired: bool,
    /// Needed by LLM detectors, natural-language feedback and generated
    /// reflections.
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub model: Option<String>,
    /// Use the reflexion prompt for binary-feedback reflections.
    #[serde(default)]
    pub llm_reflection: bool,
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub event_log: Option<PathBuf>,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default)]
    pub rules: Option<Vec<CriticalActionRule>>,
}

fn oracle_name() -> String {
    DetectorKind::Oracle.as_str().to_string()
}

impl LoopConfig {
    pub fn new(tasks: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({ "tasks": tasks.into() })).expect("defaults")
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
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
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.tasks);
        if let Some(p) = self.prompts.as_mut() {
            join(p);
        }
        if let Some(p) = self.event_log.as_mut() {
            join(p);
        }
        if let Some(b) = self.backend.as_mut() {
            *b = b.relative_to(base);
        }
    }

    pub fn detector_config(&self) -> Result<DetectorConfig, ConfigError> {
        let mut cfg = DetectorConfig::new(detector_kind(&self.detector, self.variant)?);
        cfg.threshold = self.threshold;
        cfg.aggregation = self.aggregation;
        cfg.prob_combine = self.prob_combine;
        if let Some(m) = self.samples {
            cfg.samples = m;
        }
        cfg.validate().map_err(|e| ConfigError::invalid("detector", e.to_string()))?;
        Ok(cfg)
    }

    /// Whether any part of the run calls a language model.
    pub fn needs_backend(&self) -> Result<bool, ConfigError> {
        let llm_detector = self.oracle == OracleMode::Simulated && self.detector_config()?.kind != DetectorKind::Oracle;
        Ok(llm_detector || self.feedback_kind == FeedbackKind::NaturalLanguage || self.llm_reflection)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.detector_config()?;
        if self.needs_backend()? && self.backend.is_none() {
            return Err(ConfigError::invalid(
                "backend",
                "required by LLM detectors, natural-language feedback and LLM reflections",
            ));
        }
        if let Some(rules) = &self.rules {
            if rules.is_empty() {
                return Err(ConfigError::invalid("rules", "must not be empty"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_specs_parse_and_display() {
        assert_eq!("live".parse::<BackendSpec>().unwrap(), BackendSpec::Live);
        let r: BackendSpec = "replay:fixtures/cache.jsonl".parse().unwrap();
        assert_eq!(r, BackendSpec::Replay("fixtures/cache.jsonl".into()));
        assert_eq!(r.to_string(), "replay:fixtures/cache.jsonl");
        assert!("replay:".parse::<BackendSpec>().is_err());
        assert!("carrier-pigeon:x".parse::<BackendSpec>().is_err());
        assert!("replay".parse::<BackendSpec>().is_err());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<BackendSpec>(&json).unwrap(), r);
        assert_eq!(
            r.relative_to(Path::new("/cfg")),
            BackendSpec::Replay("/cfg/fixtures/cache.jsonl".into())
        );
    }

    #[test]
    fn missing_replay_file_is_an_io_error() {
        let err = BackendSpec::Replay("/definitely/not/here.jsonl".into()).build().err().unwrap();
        assert!(matches!(err, GatewayError::Io(ref e) if e.kind() == std::io::ErrorKind::NotFound));
    }

    #[test]
    fn detector_names_and_variants() {
        assert_eq!(detector_kind("inferact", Some(Variant::Prob)).unwrap(), DetectorKind::InferactProb);
        assert_eq!(detector_kind("inferact-verb", None).unwrap(), DetectorKind::InferactVerb);
        assert_eq!(detector_kind("inferact-verb", Some(Variant::Verb)).unwrap(), DetectorKind::InferactVerb);
        assert!(detector_kind("inferact", None).is_err());
        assert!(detector_kind("direct", Some(Variant::Prob)).is_err());
        assert!(detector_kind("nope", None).is_err());
    }

    #[test]
    fn run_config_validation() {
        let mut cfg = RunConfig::new("c.jsonl", DetectorConfig::new(DetectorKind::Direct), BackendSpec::Live);
        cfg.validate().unwrap();
        cfg.tune = true;
        assert!(cfg.validate().is_err());
        cfg.detectors = vec![DetectorConfig::new(DetectorKind::TokenProb)];
        cfg.validate().unwrap();
        cfg.dev_size = 0;
        assert!(cfg.validate().is_err());
        cfg.dev_size = 50;
        cfg.detectors[0].threshold = Some(0.3);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loop_config_defaults_and_errors() {
        let cfg = LoopConfig::parse(r#"{"tasks": "tasks.jsonl"}"#, "inline").unwrap();
        assert_eq!(cfg.detector, "oracle");
        assert_eq!(cfg.n_iterations, 3);
        assert!(cfg.retry_expired);
        assert_eq!(cfg.quota, None);
        assert!(!cfg.needs_backend().unwrap());

        let cfg = LoopConfig::parse(
            r#"{"tasks": "t", "quota": "unlimited", "detector": "inferact", "variant": "prob", "threshold": 0.6,
                "backend": "replay:cache.jsonl", "feedback_kind": "natural_language"}"#,
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.quota, Some(QuotaSetting::Named(QuotaName::Unlimited)));
        assert_eq!(cfg.detector_config().unwrap().threshold, Some(0.6));
        assert_eq!(LoopConfig::parse(r#"{"tasks": "t", "quota": 5}"#, "x").unwrap().quota, Some(QuotaSetting::Count(5)));

        let err = LoopConfig::parse(r#"{"tasks": "t", "detector": "direct"}"#, "x").unwrap_err();
        assert!(err.to_string().starts_with("backend:"), "{err}");
        let err = LoopConfig::parse(r#"{"tasks": "t", "n_iterations": "three"}"#, "x").unwrap_err();
        assert!(err.to_string().contains("n_iterations"), "{err}");
        assert!(LoopConfig::parse(r#"{"tasks": "t", "bogus": 1}"#, "x").is_err());
    }
}
