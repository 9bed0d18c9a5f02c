//! Shared domain types: trajectories, tasks, critical-action rules and
//! detector outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// One (thought, action, observation) triple of an Actor run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: Option<String>,
    pub action: String,
    pub observation: String,
}

impl Step {
    pub fn new(index: usize, action: impl Into<String>, observation: impl Into<String>) -> Self {
        Self {
            index,
            thought: None,
            action: action.into(),
            observation: observation.into(),
        }
    }

    pub fn with_thought(mut self, thought: impl Into<String>) -> Self {
        self.thought = Some(thought.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Webshop,
    Hotpotqa,
    Alfworld,
    Custom,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Webshop,
        Benchmark::Hotpotqa,
        Benchmark::Alfworld,
        Benchmark::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Webshop => "webshop",
            Benchmark::Hotpotqa => "hotpotqa",
            Benchmark::Alfworld => "alfworld",
            Benchmark::Custom => "custom",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Benchmark {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "webshop" => Ok(Benchmark::Webshop),
            "hotpotqa" => Ok(Benchmark::Hotpotqa),
            "alfworld" => Ok(Benchmark::Alfworld),
            "custom" => Ok(Benchmark::Custom),
            other => Err(ModelError::UnknownBenchmark(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldKind {
    ExactAnswer,
    GoldItem,
    AnnotatedTrajectoryVerdict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldPayload {
    Flag(bool),
    Text(String),
}

/// Ground truth used to decide whether a trajectory is aligned.
///
/// Payload conventions:
/// - `exact_answer`: the gold answer string.
/// - `gold_item`: `"<item id> | <option> | <option> ..."`.
/// - `annotated_trajectory_verdict`: `true`/`"correct"` when the run is correct.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub kind: GoldKind,
    pub payload: GoldPayload,
}

impl GoldLabel {
    pub fn exact_answer(answer: impl Into<String>) -> Self {
        Self {
            kind: GoldKind::ExactAnswer,
            payload: GoldPayload::Text(answer.into()),
        }
    }

    pub fn gold_item(item_id: &str, options: &[&str]) -> Self {
        let mut parts = vec![item_id.to_string()];
        parts.extend(options.iter().map(|o| o.to_string()));
        Self {
            kind: GoldKind::GoldItem,
            payload: GoldPayload::Text(parts.join(" | ")),
        }
    }

    pub fn annotated(correct: bool) -> Self {
        Self {
            kind: GoldKind::AnnotatedTrajectoryVerdict,
            payload: GoldPayload::Flag(correct),
        }
    }

    /// Human-readable payload, used when rendering feedback prompts.
    pub fn payload_text(&self) -> String {
        match &self.payload {
            GoldPayload::Flag(b) => if *b { "correct" } else { "incorrect" }.to_string(),
            GoldPayload::Text(t) => t.clone(),
        }
    }

    pub fn matches_benchmark(&self, benchmark: Benchmark) -> bool {
        match benchmark {
            Benchmark::Hotpotqa => self.kind == GoldKind::ExactAnswer,
            Benchmark::Webshop => self.kind == GoldKind::GoldItem,
            Benchmark::Alfworld => self.kind == GoldKind::AnnotatedTrajectoryVerdict,
            Benchmark::Custom => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub benchmark: Benchmark,
    pub instruction: String,
    pub gold: Option<GoldLabel>,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, benchmark: Benchmark, instruction: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            benchmark,
            instruction: instruction.into(),
            gold: None,
        }
    }

    pub fn with_gold(mut self, gold: GoldLabel) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.task_id.trim().is_empty() {
            return Err(ModelError::invalid("task.task_id", "must be non-empty"));
        }
        if self.instruction.trim().is_empty() {
            return Err(ModelError::invalid("task.instruction", "must be non-empty"));
        }
        if let Some(gold) = &self.gold {
            if !gold.matches_benchmark(self.benchmark) {
                return Err(ModelError::invalid(
                    "task.gold.kind",
                    format!("{:?} does not fit benchmark {}", gold.kind, self.benchmark),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    InProgress,
    Terminal,
    Halted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TrajectoryRecord", into = "TrajectoryRecord")]
pub struct Trajectory {
    pub trajectory_id: String,
    pub task: TaskSpec,
    pub steps: Vec<Step>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn new(trajectory_id: impl Into<String>, task: TaskSpec, status: TrajectoryStatus) -> Self {
        Self {
            trajectory_id: trajectory_id.into(),
            task,
            steps: Vec::new(),
            status,
        }
    }

    /// Appends a step, assigning the next contiguous index.
    pub fn push(&mut self, thought: Option<&str>, action: &str, observation: &str) -> &mut Self {
        let index = self.steps.len();
        self.steps.push(Step {
            index,
            thought: thought.map(str::to_string),
            action: action.to_string(),
            observation: observation.to_string(),
        });
        self
    }

    pub fn is_halted(&self) -> bool {
        self.status == TrajectoryStatus::Halted
    }

    pub fn last_action(&self) -> Option<&str> {
        self.steps.last().map(|s| s.action.as_str())
    }

    /// Copy of this trajectory with `action` appended as a pending (not yet
    /// executed) final step with an empty observation.
    pub fn with_pending_action(&self, action: &str) -> Trajectory {
        let mut out = self.clone();
        out.push(None, action, "");
        out
    }

    /// Copy truncated to the first `len` steps.
    pub fn prefix(&self, len: usize) -> Trajectory {
        let mut out = self.clone();
        out.steps.truncate(len);
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.trajectory_id.trim().is_empty() {
            return Err(ModelError::invalid("trajectory_id", "must be non-empty"));
        }
        self.task.validate()?;
        let last = self.steps.len().saturating_sub(1);
        for (pos, step) in self.steps.iter().enumerate() {
            if step.index != pos {
                return Err(ModelError::invalid(
                    format!("steps[{pos}].index"),
                    format!("expected {pos}, found {}", step.index),
                ));
            }
            if step.action.trim().is_empty() {
                return Err(ModelError::invalid(format!("steps[{pos}].action"), "must be non-empty"));
            }
            if step.observation.is_empty() && pos != last {
                return Err(ModelError::invalid(
                    format!("steps[{pos}].observation"),
                    "only the final step may have an empty observation",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct TaskRecord {
    task_id: String,
    instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<GoldLabel>,
}

/// Wire layout of a trajectory: the benchmark sits beside the task rather
/// than inside it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    trajectory_id: String,
    benchmark: Benchmark,
    task: TaskRecord,
    status: TrajectoryStatus,
    steps: Vec<Step>,
}

impl From<TrajectoryRecord> for Trajectory {
    fn from(r: TrajectoryRecord) -> Self {
        Trajectory {
            trajectory_id: r.trajectory_id,
            task: TaskSpec {
                task_id: r.task.task_id,
                benchmark: r.benchmark,
                instruction: r.task.instruction,
                gold: r.task.gold,
            },
            steps: r.steps,
            status: r.status,
        }
    }
}

impl From<Trajectory> for TrajectoryRecord {
    fn from(t: Trajectory) -> Self {
        TrajectoryRecord {
            trajectory_id: t.trajectory_id,
            benchmark: t.task.benchmark,
            task: TaskRecord {
                task_id: t.task.task_id,
                instruction: t.task.instruction,
                gold: t.task.gold,
            },
            status: t.status,
            steps: t.steps,
        }
    }
}

/// Where a critical action may legitimately occur.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Terminal,
    Anywhere,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    Prefix,
}

/// A predicate over normalized action strings that marks an action as
/// requiring a gate check before execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalActionRule {
    pub benchmark: Benchmark,
    pub pattern: String,
    #[serde(rename = "match")]
    pub mode: MatchMode,
    pub placement: Placement,
}

impl CriticalActionRule {
    pub fn new(benchmark: Benchmark, pattern: &str, mode: MatchMode, placement: Placement) -> Self {
        Self {
            benchmark,
            pattern: normalize_action(pattern),
            mode,
            placement,
        }
    }

    pub fn matches(&self, action: &str) -> bool {
        let action = normalize_action(action);
        let pattern = normalize_action(&self.pattern);
        match self.mode {
            MatchMode::Exact => action == pattern,
            MatchMode::Prefix => action.starts_with(&pattern),
        }
    }
}

/// Trim, lowercase and collapse internal whitespace runs to a single space.
pub fn normalize_action(action: &str) -> String {
    action
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// First rule matching `action` after normalization.
pub fn is_critical<'a>(action: &str, rules: &'a [CriticalActionRule]) -> Option<&'a CriticalActionRule> {
    rules.iter().find(|rule| rule.matches(action))
}

/// Line-oriented rendering of a trajectory for prompt assembly.
///
/// Each step renders as optional `Thought:`, then `Action:` and
/// `Observation:` lines; an empty observation (pending action) is omitted.
pub fn behavior_transcript(traj: &Trajectory, include_thoughts: bool) -> Result<String, ModelError> {
    if traj.steps.is_empty() {
        return Err(ModelError::EmptyTrajectory(traj.trajectory_id.clone()));
    }
    let mut lines = Vec::with_capacity(traj.steps.len() * 3);
    for step in &traj.steps {
        if include_thoughts {
            if let Some(thought) = step.thought.as_deref().filter(|t| !t.trim().is_empty()) {
                lines.push(format!("Thought: {thought}"));
            }
        }
        lines.push(format!("Action: {}", step.action));
        if !step.observation.is_empty() {
            lines.push(format!("Observation: {}", step.observation));
        }
    }
    Ok(lines.join("\n"))
}

/// One prompt/response round trip recorded as detector evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub detector_name: String,
    pub alert: bool,
    /// Misalignment score. Probability-style detectors report values in
    /// [0,1]; token entropy reports raw nats.
    pub score: Option<f64>,
    pub threshold: Option<f64>,
    pub evidence: Vec<Exchange>,
    pub inferred_task: Option<String>,
    pub notes: Vec<String>,
}

impl DetectorVerdict {
    pub fn binary(name: &str, alert: bool, evidence: Vec<Exchange>) -> Self {
        Self {
            detector_name: name.to_string(),
            alert,
            score: None,
            threshold: None,
            evidence,
            inferred_task: None,
            notes: Vec::new(),
        }
    }

    pub fn scored(name: &str, score: f64, threshold: f64, evidence: Vec<Exchange>) -> Self {
        Self {
            detector_name: name.to_string(),
            alert: score > threshold,
            score: Some(score),
            threshold: Some(threshold),
            evidence,
            inferred_task: None,
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Confusion counts with misalignment as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}
