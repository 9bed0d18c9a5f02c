//! Append-only audit log and the invariant checks run against it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: starts at the Unix epoch and advances one
/// millisecond per reading.
#[derive(Debug, Default)]
pub struct LogicalClock {
    ticks: AtomicI64,
}

impl Clock for LogicalClock {
    fn now(&self) -> DateTime<Utc> {
        let t = self.ticks.fetch_add(1, Ordering::SeqCst);
        Utc.timestamp_millis_opt(t).single().expect("in range")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    IterationStarted,
    IterationFinished,
    AlertRaised,
    QuotaConsumed,
    AlertResolved,
    AlertExpired,
    Execute,
    DetectorError,
    FeedbackDelivered,
    TaskOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts: DateTime<Utc>,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_id: Option<String>,
    pub trajectory_id: String,
    pub detail: Value,
}

/// In-memory event log with an optional JSONL file sink. Each line is
/// flushed as it is written.
#[derive(Default)]
pub struct EventLog {
    events: Mutex<Vec<Event>>,
    sink: Mutex<Option<File>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            events: Mutex::new(Vec::new()),
            sink: Mutex::new(Some(file)),
        })
    }

    pub fn append(&self, event: Event) {
        if let Some(f) = self.sink.lock().expect("sink").as_mut() {
            let line = serde_json::to_string(&event).expect("event serializes");
            // the audit trail is best effort on disk; memory is authoritative
            let _ = writeln!(f, "{line}").and_then(|_| f.flush());
        }
        self.events.lock().expect("events").push(event);
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().expect("events").clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("events").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flush(&self) -> std::io::Result<()> {
        match self.sink.lock().expect("sink").as_mut() {
            Some(f) => f.sync_all(),
            None => Ok(()),
        }
    }
}

pub fn read_event_log(path: &Path) -> std::io::Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

pub fn to_jsonl(events: &[Event]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub rule: &'static str,
    pub message: String,
}

fn detail_bool(e: &Event, key: &str) -> Option<bool> {
    e.detail.get(key).and_then(Value::as_bool)
}

fn detail_u64(e: &Event, key: &str) -> Option<u64> {
    e.detail.get(key).and_then(Value::as_u64)
}

fn detail_str<'a>(e: &'a Event, key: &str) -> Option<&'a str> {
    e.detail.get(key).and_then(Value::as_str)
}

/// Checks the orchestrator's safety properties over a recorded log:
/// quota safety, false-positive-first consumption within oracle review
/// passes, no execution of a held action while its alert blocks, and
/// monotone task freezing.
pub fn check_invariants(events: &[Event]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |index: usize, rule: &'static str, message: String| out.push(Violation { index, rule, message });

    // eventual ground truth of each alert, where the log reveals it
    let mut aligned: BTreeMap<&str, bool> = BTreeMap::new();
    for e in events {
        let Some(id) = e.alert_id.as_deref() else { continue };
        match e.event {
            EventKind::AlertResolved => {
                aligned.insert(id, detail_str(e, "state") == Some("resolved_aligned"));
            }
            EventKind::AlertExpired => {
                if let Some(m) = detail_bool(e, "misaligned") {
                    aligned.insert(id, !m);
                }
            }
            _ => {}
        }
    }

    let mut capacity = u64::MAX;
    let mut consumed = 0u64;
    let mut open: BTreeMap<&str, &str> = BTreeMap::new();
    let mut state: BTreeMap<&str, &str> = BTreeMap::new();
    let mut blocked: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut succeeded: BTreeSet<&str> = BTreeSet::new();

    for (i, e) in events.iter().enumerate() {
        let traj = e.trajectory_id.as_str();
        match e.event {
            EventKind::IterationStarted => {
                capacity = detail_u64(e, "capacity").unwrap_or(u64::MAX);
                consumed = 0;
            }
            EventKind::AlertRaised => {
                let id = e.alert_id.as_deref().unwrap_or("");
                open.insert(id, traj);
                state.insert(id, "open");
                blocked.entry(traj).or_default().insert(id);
            }
            EventKind::QuotaConsumed => {
                consumed += 1;
                if consumed > capacity {
                    bad(i, "quota", format!("consumed {consumed} > capacity {capacity}"));
                }
                let id = e.alert_id.as_deref().unwrap_or("");
                // single manual resolutions cannot know which alerts are false positives
                let batch = detail_bool(e, "batch") != Some(false);
                if batch && detail_bool(e, "false_positive") == Some(false) {
                    for other in open.keys().filter(|o| **o != id) {
                        if aligned.get(other) == Some(&true) {
                            bad(i, "fp_priority", format!("true positive {id} consumed while false positive {other} waited"));
                        }
                    }
                }
            }
            EventKind::AlertResolved => {
                let id = e.alert_id.as_deref().unwrap_or("");
                if state.get(id) != Some(&"open") {
                    bad(i, "transition", format!("alert {id} resolved from state {:?}", state.get(id)));
                }
                open.remove(id);
                let st = detail_str(e, "state").unwrap_or("");
                state.insert(id, st);
                if let Some(set) = blocked.get_mut(traj) {
                    set.remove(id);
                }
            }
            EventKind::AlertExpired => {
                let id = e.alert_id.as_deref().unwrap_or("");
                if state.get(id) != Some(&"open") {
                    bad(i, "transition", format!("alert {id} expired from state {:?}", state.get(id)));
                }
                open.remove(id);
                state.insert(id, "expired_quota");
                if detail_bool(e, "proceed") == Some(true) {
                    if let Some(set) = blocked.get_mut(traj) {
                        set.remove(id);
                    }
                }
            }
            EventKind::Execute => {
                if let Some(id) = e.alert_id.as_deref() {
                    let st = state.get(id).copied();
                    let proceed_expired = st == Some("expired_quota") && detail_bool(e, "on_expiry") == Some(true);
                    if st != Some("resolved_aligned") && !proceed_expired {
                        bad(i, "no_execute_while_held", format!("alert {id} executed in state {st:?}"));
                    }
                } else if blocked.get(traj).is_some_and(|s| !s.is_empty()) {
                    bad(i, "no_execute_while_held", format!("{traj} executed while an alert blocks it"));
                }
            }
            EventKind::TaskOutcome => {
                let task = detail_str(e, "task_id").unwrap_or(traj);
                let success = detail_bool(e, "success").unwrap_or(false);
                if succeeded.contains(task) && !success {
                    bad(i, "monotone_freezing", format!("task {task} regressed after success"));
                }
                if success {
                    succeeded.insert(task);
                }
            }
            EventKind::IterationFinished | EventKind::DetectorError | EventKind::FeedbackDelivered => {}
        }
    }
    out
}

pub(crate) fn event(
    clock: &dyn Clock,
    kind: EventKind,
    alert_id: Option<&str>,
    trajectory_id: &str,
    detail: Value,
) -> Event {
    Event {
        ts: clock.now(),
        event: kind,
        alert_id: alert_id.map(str::to_string),
        trajectory_id: trajectory_id.to_string(),
        detail,
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    fn ev(kind: EventKind, alert: Option<&str>, traj: &str, detail: Value) -> Event {
        event(&LogicalClock::default(), kind, alert, traj, detail)
    }

    #[test]
    fn logical_clock_is_monotone() {
        let c = LogicalClock::default();
        let a = c.now();
        let b = c.now();
        assert!(b > a);
        assert_eq!(a.to_rfc3339(), "1970-01-01T00:00:00+00:00");
    }

    #[test]
    fn detects_each_violation() {
        let log = vec![
            ev(EventKind::IterationStarted, None, "", json!({"iteration": 0, "capacity": 1})),
            ev(EventKind::AlertRaised, Some("a1"), "t1", json!({})),
            ev(EventKind::AlertRaised, Some("a2"), "t2", json!({})),
            ev(EventKind::Execute, None, "t1", json!({"action": "click[buy now]"})),
            ev(EventKind::QuotaConsumed, Some("a1"), "t1", json!({"false_positive": false})),
            ev(EventKind::AlertResolved, Some("a1"), "t1", json!({"state": "resolved_misaligned"})),
            ev(EventKind::QuotaConsumed, Some("a2"), "t2", json!({"false_positive": true})),
            ev(EventKind::AlertResolved, Some("a2"), "t2", json!({"state": "resolved_aligned"})),
            ev(EventKind::AlertResolved, Some("a2"), "t2", json!({"state": "resolved_aligned"})),
            ev(EventKind::TaskOutcome, None, "t2", json!({"task_id": "x", "success": true})),
            ev(EventKind::TaskOutcome, None, "t3", json!({"task_id": "x", "success": false})),
        ];
        let rules: BTreeSet<&str> = check_invariants(&log).iter().map(|v| v.rule).collect();
        let expected: BTreeSet<&str> =
            ["quota", "fp_priority", "no_execute_while_held", "transition", "monotone_freezing"].into();
        assert_eq!(rules, expected);
    }

    #[test]
    fn manual_resolutions_are_exempt_from_fp_priority() {
        let log = |batch: bool| {
            vec![
                ev(EventKind::IterationStarted, None, "", json!({"iteration": 0, "capacity": 2})),
                ev(EventKind::AlertRaised, Some("a1"), "t1", json!({})),
                ev(EventKind::AlertRaised, Some("a2"), "t2", json!({})),
                ev(EventKind::QuotaConsumed, Some("a1"), "t1", json!({"false_positive": false, "batch": batch})),
                ev(EventKind::AlertResolved, Some("a1"), "t1", json!({"state": "resolved_misaligned"})),
                ev(EventKind::QuotaConsumed, Some("a2"), "t2", json!({"false_positive": true, "batch": batch})),
                ev(EventKind::AlertResolved, Some("a2"), "t2", json!({"state": "resolved_aligned"})),
            ]
        };
        assert!(check_invariants(&log(false)).is_empty());
        let v = check_invariants(&log(true));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "fp_priority");
    }

    #[test]
    fn clean_log_passes_and_round_trips() {
        let log = vec![
            ev(EventKind::IterationStarted, None, "", json!({"iteration": 0, "capacity": 2})),
            ev(EventKind::AlertRaised, Some("a1"), "t1", json!({})),
            ev(EventKind::QuotaConsumed, Some("a1"), "t1", json!({"false_positive": true})),
            ev(EventKind::AlertResolved, Some("a1"), "t1", json!({"state": "resolved_aligned"})),
            ev(EventKind::Execute, Some("a1"), "t1", json!({})),
        ];
        assert!(check_invariants(&log).is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let sink = EventLog::with_file(&path).unwrap();
        for e in &log {
            sink.append(e.clone());
        }
        sink.flush().unwrap();
        assert_eq!(read_event_log(&path).unwrap(), log);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), to_jsonl(&log));
        let first: Value = serde_json::from_str(to_jsonl(&log).lines().nth(1).unwrap()).unwrap();
        assert_eq!(first["event"], "alert_raised");
        assert_eq!(first["alert_id"], "a1");
        assert!(first.get("ts").unwrap().as_str().unwrap().ends_with('Z'));
    }
}
