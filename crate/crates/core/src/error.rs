use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("trajectory `{0}` has no steps")]
    EmptyTrajectory(String),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
}

impl ModelError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Field path for schema errors, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            ModelError::Invalid { field, .. } => Some(field),
            ModelError::EmptyTrajectory(_) => Some("steps"),
            ModelError::UnknownBenchmark(_) => Some("benchmark"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("replay cache miss for key {0}")]
    CacheMiss(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend response: {0}")]
    Parse(String),
    #[error("no scripted response matches the prompt")]
    NoScript,
    #[error("unparseable choice: {0}")]
    UnparseableChoice(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("replay cache io: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{template}` has unbound placeholder `{{{placeholder}}}`")]
    Unbound { template: String, placeholder: String },
    #[error("no prompt template for {0}")]
    Missing(String),
    #[error("prompt io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("task inference failed: {0}")]
    Inference(String),
    #[error("invalid detector configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {preds} predictions vs {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("empty input")]
    Empty,
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("score {0} outside [0,1]")]
    ScoreOutOfRange(f64),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {source}")]
    Schema {
        path: String,
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("{path}:{line}: malformed record at `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{path}:{line}: duplicate trajectory_id `{id}`")]
    Duplicate { path: String, line: usize, id: String },
    #[error("label resolution for `{trajectory_id}`: {message}")]
    Label { trajectory_id: String, message: String },
    #[error("split: {0}")]
    Split(String),
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detector failed on `{trajectory_id}`: {source}")]
    Detector {
        trajectory_id: String,
        #[source]
        source: DetectorError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("nothing to evaluate: {0}")]
    NoData(String),
    #[error("invalid evaluation setup: {0}")]
    Config(String),
}

impl EvalError {
    /// The gateway failure behind a detector error, if any.
    pub fn gateway(&self) -> Option<&GatewayError> {
        match self {
            EvalError::Detector {
                source: DetectorError::Gateway(g),
                ..
            } => Some(g),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Failure of an end-to-end evaluation or loop run.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend: {0}")]
    Backend(GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// A replay cache that is missing or lacks a requested entry.
    pub fn is_replay_miss(&self) -> bool {
        let gateway = match self {
            RunError::Backend(g) => Some(g),
            RunError::Eval(e) => e.gateway(),
            RunError::Detector(DetectorError::Gateway(g)) => Some(g),
            RunError::Gate(GateError::Detector(DetectorError::Gateway(g))) => Some(g),
            _ => None,
        };
        matches!(gateway, Some(GatewayError::CacheMiss(_)))
            || matches!(self, RunError::Backend(GatewayError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound)
    }

    /// Problems with the run's inputs rather than with inference.
    pub fn is_config(&self) -> bool {
        match self {
            RunError::Config(_) | RunError::Prompt(_) | RunError::Corpus(_) => true,
            RunError::Backend(g) => !self.is_replay_miss() && !g.is_retryable(),
            RunError::Detector(DetectorError::Config(_)) => true,
            RunError::Eval(e) => matches!(
                e,
                EvalError::Corpus(_) | EvalError::Metrics(_) | EvalError::NoData(_) | EvalError::Config(_)
            ),
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("unknown alert `{0}`")]
    UnknownAlert(String),
    #[error("alert `{0}` is not open")]
    NotOpen(String),
    #[error("quota exhausted; alert `{0}` expired")]
    QuotaExhausted(String),
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("actor: {0}")]
    Actor(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
