use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::feedback::llm_reflection;
use crate::detectors::DetectorContext;
use crate::error::GateError;
use crate::model::{TaskSpec, Trajectory};

/// The agent under guard. Produces one trial per call; `memory` holds the
/// feedback and reflections accumulated for the task so far.
pub trait Actor: Send + Sync {
    fn attempt(&self, task: &TaskSpec, memory: &[String], iteration: u32) -> Result<Trajectory, GateError>;

    /// Self-reflection on a trial the oracle marked misaligned.
    fn reflect(&self, task: &TaskSpec, failed: &Trajectory) -> Result<String, GateError>;
}

/// Canned trials for one task: what the Actor does before and after it has
/// received any feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorScript {
    pub without_feedback: Trajectory,
    pub with_feedback: Trajectory,
}

/// Replays [`ActorScript`]s; succeeds or fails purely by whether memory
/// is non-empty.
#[derive(Clone, Default)]
pub struct ScriptedActor {
    scripts: BTreeMap<String, ActorScript>,
    reflector: Option<DetectorContext>,
}

impl ScriptedActor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(mut self, task_id: impl Into<String>, script: ActorScript) -> Self {
        self.scripts.insert(task_id.into(), script);
        self
    }

    /// Reflections are generated with the reflexion prompt instead of a
    /// fixed template.
    pub fn with_reflector(mut self, ctx: DetectorContext) -> Self {
        self.reflector = Some(ctx);
        self
    }

    /// Loads a JSONL file of `{"task_id", "without_feedback", "with_feedback"}`.
    pub fn from_jsonl(path: &Path) -> Result<Self, GateError> {
        #[derive(Deserialize)]
        struct Line {
            task_id: String,
            #[serde(flatten)]
            script: ActorScript,
        }
        let text = std::fs::read_to_string(path)?;
        let mut actor = Self::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let l: Line = serde_json::from_str(line).map_err(|e| {
                GateError::Actor(format!("{}:{}: bad actor script: {e}", path.display(), i + 1))
            })?;
            actor.scripts.insert(l.task_id, l.script);
        }
        Ok(actor)
    }

    pub fn tasks(&self) -> Vec<TaskSpec> {
        self.scripts.values().map(|s| s.without_feedback.task.clone()).collect()
    }
}

impl Actor for ScriptedActor {
    fn attempt(&self, task: &TaskSpec, memory: &[String], _iteration: u32) -> Result<Trajectory, GateError> {
        let script = self
            .scripts
            .get(&task.task_id)
            .ok_or_else(|| GateError::Actor(format!("no script for task `{}`", task.task_id)))?;
        Ok(if memory.is_empty() {
            script.without_feedback.clone()
        } else {
            script.with_feedback.clone()
        })
    }

    fn reflect(&self, task: &TaskSpec, failed: &Trajectory) -> Result<String, GateError> {
        if let Some(ctx) = &self.reflector {
            return llm_reflection(ctx, failed);
        }
        Ok(format!(
            "My attempt at \"{}\" was judged misaligned when I tried `{}`. Next time I will re-read the task and check each requirement before that action.",
            task.instruction,
            failed.last_action().unwrap_or("")
        ))
    }
}
