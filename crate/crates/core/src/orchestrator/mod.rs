//! The preemptive gate: intercepts critical actions, raises alerts, manages
//! the inspection quota and drives the feedback loop.

mod actor;
mod alert;
mod events;
mod feedback;
mod simulation;
mod store;

use serde::{Deserialize, Serialize};

pub use actor::{Actor, ActorScript, ScriptedActor};
pub use alert::{Alert, AlertState, Consumption, Feedback, FeedbackKind, FeedbackSource, QuotaLedger};
pub use events::{check_invariants, read_event_log, to_jsonl, Clock, Event, EventKind, EventLog, LogicalClock, SystemClock, Violation};
pub use feedback::{generate_nl_feedback, llm_reflection, truncate_sentences, Oracle, SimulatedOracle, MAX_FEEDBACK_SENTENCES};
pub use simulation::{run_loop, IterationReport, LoopSettings, TaskOutcome};
pub use store::{AlertStore, Review};

use crate::detectors::Detector;
use crate::model::{is_critical, CriticalActionRule, DetectorVerdict, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum GateDecision {
    Proceed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<DetectorVerdict>,
    },
    Hold {
        alert_id: String,
        alert: Box<Alert>,
    },
}

impl GateDecision {
    fn hold(alert: Alert) -> Self {
        GateDecision::Hold {
            alert_id: alert.alert_id.clone(),
            alert: Box::new(alert),
        }
    }

    pub fn is_hold(&self) -> bool {
        matches!(self, GateDecision::Hold { .. })
    }

    pub fn alert(&self) -> Option<&Alert> {
        match self {
            GateDecision::Hold { alert, .. } => Some(alert),
            GateDecision::Proceed { .. } => None,
        }
    }
}

/// Name recorded on verdicts for halted trajectories.
pub const HALTED_DETECTOR: &str = "halted";

/// Decides whether `pending_action` may execute after `traj`.
///
/// A trajectory already held by an open (or blocking expired) alert stays
/// held. Halted trajectories are held without consulting the detector.
/// Non-critical actions proceed without any detector call. Detector errors
/// hold the action.
pub fn gate_check(
    store: &AlertStore,
    traj: &Trajectory,
    pending_action: &str,
    detector: &dyn Detector,
    rules: &[CriticalActionRule],
) -> GateDecision {
    if let Some(existing) = store.blocking_alert(&traj.trajectory_id) {
        return GateDecision::hold(existing);
    }
    if traj.is_halted() {
        let verdict = DetectorVerdict::binary(HALTED_DETECTOR, true, Vec::new())
            .note("trajectory halted; routed to the oracle");
        return GateDecision::hold(store.raise(traj.clone(), pending_action, verdict, true));
    }
    let Some(rule) = is_critical(pending_action, rules) else {
        store.record_execute(&traj.trajectory_id, pending_action, None, false);
        return GateDecision::Proceed { verdict: None };
    };
    let verdict = match detector.detect(&traj.with_pending_action(pending_action), rule) {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            store.note_detector_error(&traj.trajectory_id, &msg);
            DetectorVerdict::binary(detector.name(), true, Vec::new()).note(format!("detector failure: {msg}"))
        }
    };
    if verdict.alert {
        GateDecision::hold(store.raise(traj.clone(), pending_action, verdict, false))
    } else {
        store.record_execute(&traj.trajectory_id, pending_action, None, false);
        GateDecision::Proceed { verdict: Some(verdict) }
    }
}
