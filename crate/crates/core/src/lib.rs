//! Preemptive misalignment gate for LLM agents: critical-action detection,
//! InferAct and baseline detectors, calibration metrics, and the
//! human-in-the-loop feedback orchestrator.

pub mod config;
pub mod corpus;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod pipeline;
pub mod prompts;
pub mod report;

pub use error::{
    ConfigError, CorpusError, DetectorError, EvalError, GateError, GatewayError, MetricsError, ModelError, PromptError,
    RunError,
};
