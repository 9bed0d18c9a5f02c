//! The N-iteration correction loop: Actor trials are gated, held actions
//! are reviewed by the oracle under a per-iteration quota, and feedback is
//! carried into the next trial of the same task.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::actor::Actor;
use super::alert::{AlertState, Consumption, FeedbackKind};
use super::events::EventKind;
use super::feedback::Oracle;
use super::store::AlertStore;
use super::{gate_check, GateDecision};
use crate::corpus::resolve_label;
use crate::detectors::Detector;
use crate::error::GateError;
use crate::model::{CriticalActionRule, DetectorVerdict, TaskSpec, Trajectory, TrajectoryStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSettings {
    /// Iterations after the initial trial; reports cover `0..=n_iterations`.
    pub n_iterations: u32,
    /// Inspections per iteration; `None` is unlimited.
    pub quota: Option<usize>,
    pub feedback_kind: FeedbackKind,
    /// Whether a task whose alert expired may retry (without feedback).
    pub retry_expired: bool,
    /// Oracle reviews every critical action and every failed trial.
    pub full_validation: bool,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            n_iterations: 3,
            quota: None,
            feedback_kind: FeedbackKind::Binary,
            retry_expired: true,
            full_validation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub trajectory_id: Option<String>,
    pub success: bool,
    /// Succeeded in an earlier iteration and was not re-run.
    pub frozen: bool,
    /// Trial stopped at a held action that never executed.
    pub blocked: bool,
    pub alerts: Vec<String>,
    /// Feedback for this task was produced in this iteration.
    pub feedback_received: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub outcomes: Vec<TaskOutcome>,
    pub successes: usize,
    pub total: usize,
    pub success_rate: f64,
    pub alerts_raised: usize,
    pub resolved_aligned: usize,
    pub resolved_misaligned: usize,
    pub expired: usize,
    pub quota_capacity: Option<usize>,
    pub quota_consumed: usize,
    pub consumption: Vec<Consumption>,
    /// Feedback entries produced by this iteration's reviews.
    pub feedback_produced: usize,
    /// Tasks whose trial in this iteration used feedback new since the
    /// previous iteration.
    pub feedback_delivered: usize,
    pub aborted: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum TrialState {
    Running,
    Held,
    Blocked,
    Finished,
}

struct Trial {
    task: TaskSpec,
    traj: Trajectory,
    cursor: usize,
    state: TrialState,
    alerts: Vec<String>,
    reviewed: bool,
}

/// Gate every step from the cursor on; stops at the first hold.
fn advance(trial: &mut Trial, store: &AlertStore, detector: &dyn Detector, rules: &[CriticalActionRule]) {
    let len = trial.traj.steps.len();
    while trial.cursor < len {
        let i = trial.cursor;
        let mut prefix = trial.traj.prefix(i);
        prefix.status = if trial.traj.is_halted() && i + 1 == len {
            TrajectoryStatus::Halted
        } else {
            TrajectoryStatus::InProgress
        };
        let action = trial.traj.steps[i].action.clone();
        match gate_check(store, &prefix, &action, detector, rules) {
            GateDecision::Proceed { .. } => trial.cursor += 1,
            GateDecision::Hold { alert_id, .. } => {
                if !trial.alerts.contains(&alert_id) {
                    trial.alerts.push(alert_id);
                }
                trial.state = TrialState::Held;
                return;
            }
        }
    }
    trial.state = TrialState::Finished;
}

fn trial_succeeded(trial: &Trial) -> Result<bool, GateError> {
    if trial.state != TrialState::Finished || trial.traj.is_halted() {
        return Ok(false);
    }
    let gold = trial
        .task
        .gold
        .as_ref()
        .ok_or_else(|| GateError::OracleUnavailable(format!("task `{}` has no gold label", trial.task.task_id)))?;
    Ok(!resolve_label(&trial.traj, gold)?)
}

/// Runs the initial trial plus `settings.n_iterations` correction rounds.
///
/// Each iteration re-attempts only tasks that have not yet succeeded.
/// Within an iteration the oracle reviews open alerts in rounds: false
/// positives consume quota before true positives, aligned resolutions let
/// the trial continue, and misaligned ones attach feedback that the task's
/// next trial receives. Oracle failure ends the loop with a partial report.
pub fn run_loop(
    tasks: &[TaskSpec],
    actor: &dyn Actor,
    detector: &dyn Detector,
    rules: &[CriticalActionRule],
    oracle: &dyn Oracle,
    settings: &LoopSettings,
    store: &AlertStore,
) -> Result<Vec<IterationReport>, GateError> {
    let mut memory: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut fresh: BTreeSet<String> = BTreeSet::new();
    let mut frozen: BTreeSet<String> = BTreeSet::new();
    let mut retired: BTreeSet<String> = BTreeSet::new();
    let mut reports = Vec::new();

    for k in 0..=settings.n_iterations {
        store.begin_iteration(k, settings.quota.unwrap_or(usize::MAX));
        let delivered = std::mem::take(&mut fresh);
        for task_id in &delivered {
            store.note(EventKind::FeedbackDelivered, "", json!({"iteration": k, "task_id": task_id}));
        }

        let mut trials: Vec<Trial> = Vec::new();
        for task in tasks.iter().filter(|t| !frozen.contains(&t.task_id) && !retired.contains(&t.task_id)) {
            let mem = memory.get(&task.task_id).cloned().unwrap_or_default();
            let mut traj = actor.attempt(task, &mem, k)?;
            traj.trajectory_id = format!("{}#{k}", task.task_id);
            traj.task = task.clone();
            let mut trial = Trial {
                task: task.clone(),
                traj,
                cursor: 0,
                state: TrialState::Running,
                alerts: Vec::new(),
                reviewed: false,
            };
            advance(&mut trial, store, detector, rules);
            trials.push(trial);
        }

        let mut aborted = None;
        let mut produced: BTreeSet<String> = BTreeSet::new();
        let mut counts = (0usize, 0usize, 0usize);
        'rounds: loop {
            if settings.full_validation {
                for trial in trials.iter_mut().filter(|t| t.state == TrialState::Finished && !t.reviewed) {
                    trial.reviewed = true;
                    if trial.alerts.is_empty() && !trial_succeeded(trial)? {
                        let last = trial.traj.steps.len().saturating_sub(1);
                        let verdict = DetectorVerdict::binary("full-validation", true, Vec::new())
                            .note("post-hoc review of a trial without critical actions");
                        let snapshot = trial.traj.prefix(last);
                        let alert = store.raise(snapshot, &trial.traj.steps[last].action, verdict, false);
                        trial.alerts.push(alert.alert_id);
                        trial.state = TrialState::Held;
                    }
                }
            }
            if store.list(Some(AlertState::Open)).is_empty() {
                break;
            }
            let reviews = match store.review_open(
                |a| oracle.judge(a),
                |a| oracle.feedback(a, settings.feedback_kind),
            ) {
                Ok(r) => r,
                Err(e) => {
                    aborted = Some(e.to_string());
                    break 'rounds;
                }
            };
            for review in reviews {
                let Some(trial) = trials.iter_mut().find(|t| t.traj.trajectory_id == review.alert.trajectory_id())
                else {
                    continue;
                };
                match review.alert.state {
                    AlertState::ResolvedAligned => {
                        counts.0 += 1;
                        if trial.state == TrialState::Held {
                            trial.cursor += 1;
                            trial.state = TrialState::Running;
                            advance(trial, store, detector, rules);
                        }
                    }
                    AlertState::ResolvedMisaligned => {
                        counts.1 += 1;
                        trial.state = TrialState::Blocked;
                        let fb = review.alert.feedback.clone().expect("misaligned alerts carry feedback");
                        let entry = match fb.kind {
                            FeedbackKind::NaturalLanguage => fb.payload,
                            FeedbackKind::Binary => actor.reflect(&trial.task, &review.alert.full_trajectory())?,
                        };
                        memory.entry(trial.task.task_id.clone()).or_default().push(entry);
                        produced.insert(trial.task.task_id.clone());
                    }
                    AlertState::ExpiredQuota => {
                        counts.2 += 1;
                        if store.proceed_on_expiry() && trial.state == TrialState::Held {
                            trial.cursor += 1;
                            trial.state = TrialState::Running;
                            advance(trial, store, detector, rules);
                        } else {
                            trial.state = TrialState::Blocked;
                            if !settings.retry_expired {
                                retired.insert(trial.task.task_id.clone());
                            }
                        }
                    }
                    AlertState::Open => unreachable!("reviews leave no alert open"),
                }
            }
        }
        if aborted.is_some() {
            for a in store.expire_open() {
                counts.2 += 1;
                if let Some(t) = trials.iter_mut().find(|t| t.traj.trajectory_id == a.trajectory_id()) {
                    t.state = TrialState::Blocked;
                }
            }
        }

        let mut outcomes = Vec::with_capacity(tasks.len());
        for task in tasks {
            if let Some(trial) = trials.iter().find(|t| t.task.task_id == task.task_id) {
                let success = trial_succeeded(trial)?;
                if success {
                    frozen.insert(task.task_id.clone());
                }
                outcomes.push(TaskOutcome {
                    task_id: task.task_id.clone(),
                    trajectory_id: Some(trial.traj.trajectory_id.clone()),
                    success,
                    frozen: false,
                    blocked: trial.state == TrialState::Blocked,
                    alerts: trial.alerts.clone(),
                    feedback_received: produced.contains(&task.task_id),
                });
            } else {
                outcomes.push(TaskOutcome {
                    task_id: task.task_id.clone(),
                    trajectory_id: None,
                    success: frozen.contains(&task.task_id),
                    frozen: frozen.contains(&task.task_id),
                    blocked: false,
                    alerts: Vec::new(),
                    feedback_received: false,
                });
            }
        }
        for o in &outcomes {
            store.note(
                EventKind::TaskOutcome,
                o.trajectory_id.as_deref().unwrap_or(""),
                json!({"iteration": k, "task_id": o.task_id, "success": o.success, "frozen": o.frozen}),
            );
        }
        let successes = outcomes.iter().filter(|o| o.success).count();
        let total = tasks.len();
        let quota = store.quota();
        let report = IterationReport {
            iteration: k,
            successes,
            total,
            success_rate: if total == 0 { 0.0 } else { successes as f64 / total as f64 },
            alerts_raised: trials.iter().map(|t| t.alerts.len()).sum(),
            resolved_aligned: counts.0,
            resolved_misaligned: counts.1,
            expired: counts.2,
            quota_capacity: settings.quota,
            quota_consumed: quota.consumed,
            consumption: quota.log,
            feedback_produced: produced.len(),
            feedback_delivered: delivered.len(),
            aborted: aborted.clone(),
            outcomes,
        };
        store.note(
            EventKind::IterationFinished,
            "",
            json!({"iteration": k, "success_rate": report.success_rate}),
        );
        reports.push(report);
        fresh = produced;
        if aborted.is_some() {
            break;
        }
    }
    Ok(reports)
}
