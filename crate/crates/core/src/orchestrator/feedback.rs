use std::sync::LazyLock;

use regex::Regex;

use super::alert::{Alert, Feedback, FeedbackKind, FeedbackSource};
use crate::corpus::resolve_label;
use crate::detectors::DetectorContext;
use crate::error::GateError;
use crate::gateway::Message;
use crate::model::{behavior_transcript, Exchange, Trajectory};
use crate::prompts::Family;

/// Sentence cap for simulated natural-language feedback.
pub const MAX_FEEDBACK_SENTENCES: usize = 5;

static FEEDBACK_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)feedback\s*:\s*(.+)").expect("regex"));
static REFLECTION_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)reflection\s*:\s*(.+)").expect("regex"));
static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]+(\s+|$)").expect("regex"));

/// Keeps at most `max` sentences. Returns the kept text and the number of
/// sentences found in the input.
pub fn truncate_sentences(text: &str, max: usize) -> (String, usize) {
    let text = text.trim();
    let mut ends = Vec::new();
    for m in SENTENCE_END.find_iter(text) {
        ends.push(m.start() + m.as_str().trim_end().len());
    }
    let mut count = ends.len();
    if ends.last().is_none_or(|e| *e < text.len()) && !text.is_empty() {
        // trailing fragment without terminal punctuation
        count += 1;
        ends.push(text.len());
    }
    if count <= max {
        return (text.to_string(), count);
    }
    (text[..ends[max - 1]].trim_end().to_string(), count)
}

/// Simulated-oracle natural-language feedback from the benchmark's
/// feedback prompt. An unparseable reply falls back to binary feedback.
pub fn generate_nl_feedback(
    ctx: &DetectorContext,
    failed: &Trajectory,
    evidence: &mut Vec<Exchange>,
) -> Result<Feedback, GateError> {
    let task = &failed.task;
    let gold = task
        .gold
        .as_ref()
        .ok_or_else(|| GateError::OracleUnavailable(format!("task `{}` has no gold label", task.task_id)))?;
    let chain = behavior_transcript(failed, true).map_err(crate::error::DetectorError::from)?;
    let template = ctx
        .prompts
        .get(task.benchmark, Family::Feedback, "main")
        .map_err(crate::error::DetectorError::from)?;
    let prompt = template
        .render(&[
            ("task", &task.instruction),
            ("gold_label_actor", &gold.payload_text()),
            ("incorrect_action_chain", &chain),
        ])
        .map_err(crate::error::DetectorError::from)?;
    let req = ctx.gateway.request(vec![Message::user(prompt)]);
    let (text, _) = ctx
        .ask("feedback", &req, evidence, |r| {
            FEEDBACK_LINE
                .captures(&r.text)
                .map(|c| c[1].trim().to_string())
                .filter(|t| !t.is_empty())
        })
        .map_err(crate::error::DetectorError::from)?;
    let Some(text) = text else {
        let mut fb = Feedback::binary(FeedbackSource::SimulatedOracle);
        fb.notes.push("feedback reply unparseable; fell back to binary".into());
        return Ok(fb);
    };
    let (kept, count) = truncate_sentences(&text, MAX_FEEDBACK_SENTENCES);
    let mut fb = Feedback::natural_language(kept, FeedbackSource::SimulatedOracle);
    if count > MAX_FEEDBACK_SENTENCES {
        fb.notes.push(format!("truncated from {count} to {MAX_FEEDBACK_SENTENCES} sentences"));
    }
    Ok(fb)
}

/// Reflexion-style self-reflection produced by the Actor's own model.
pub fn llm_reflection(ctx: &DetectorContext, failed: &Trajectory) -> Result<String, GateError> {
    let chain = behavior_transcript(failed, true).map_err(crate::error::DetectorError::from)?;
    let prompt = ctx
        .prompts
        .reflexion()
        .and_then(|t| t.render(&[("task", &failed.task.instruction), ("incorrect_action_chain", &chain)]))
        .map_err(crate::error::DetectorError::from)?;
    let req = ctx.gateway.request(vec![Message::user(prompt)]);
    let mut evidence = Vec::new();
    let (text, raw) = ctx
        .ask("reflection", &req, &mut evidence, |r| {
            REFLECTION_LINE.captures(&r.text).map(|c| c[1].trim().to_string())
        })
        .map_err(crate::error::DetectorError::from)?;
    Ok(text.unwrap_or_else(|| raw.trim().to_string()))
}

/// Judges held actions and writes feedback for misaligned ones.
pub trait Oracle: Send + Sync {
    /// `true` when the alerted trajectory is misaligned.
    fn judge(&self, alert: &Alert) -> Result<bool, GateError>;

    fn feedback(&self, alert: &Alert, kind: FeedbackKind) -> Result<Feedback, GateError>;
}

/// Oracle backed by gold labels; natural-language feedback needs an LLM
/// context.
#[derive(Clone, Default)]
pub struct SimulatedOracle {
    nl: Option<DetectorContext>,
}

impl SimulatedOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_language_model(ctx: DetectorContext) -> Self {
        Self { nl: Some(ctx) }
    }
}

impl Oracle for SimulatedOracle {
    fn judge(&self, alert: &Alert) -> Result<bool, GateError> {
        if alert.halted {
            return Ok(true);
        }
        let traj = alert.full_trajectory();
        let gold = traj
            .task
            .gold
            .as_ref()
            .ok_or_else(|| GateError::OracleUnavailable(format!("task `{}` has no gold label", traj.task.task_id)))?;
        Ok(resolve_label(&traj, gold)?)
    }

    fn feedback(&self, alert: &Alert, kind: FeedbackKind) -> Result<Feedback, GateError> {
        match kind {
            FeedbackKind::Binary => Ok(Feedback::binary(FeedbackSource::SimulatedOracle)),
            FeedbackKind::NaturalLanguage => {
                let ctx = self.nl.as_ref().ok_or_else(|| {
                    GateError::OracleUnavailable("natural-language feedback needs a language model".into())
                })?;
                let mut evidence = Vec::new();
                generate_nl_feedback(ctx, &alert.full_trajectory(), &mut evidence)
            }
        }
    }
}
