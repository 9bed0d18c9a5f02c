use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde_json::json;

use super::alert::{Alert, AlertState, Feedback, QuotaLedger};
use super::events::{event, Clock, EventKind, EventLog, SystemClock};
use crate::error::GateError;
use crate::model::{DetectorVerdict, Trajectory};

/// Outcome of one oracle review inside [`AlertStore::review_open`].
#[derive(Clone, Debug, PartialEq)]
pub struct Review {
    pub alert: Alert,
    pub misaligned: bool,
}

struct State {
    alerts: BTreeMap<String, Alert>,
    ledger: QuotaLedger,
    iteration: u32,
    next_id: u64,
}

/// Single-writer alert state machine. Every mutation takes the one lock,
/// so transitions and quota consumption are totally ordered.
pub struct AlertStore {
    state: Mutex<State>,
    log: Arc<EventLog>,
    clock: Arc<dyn Clock>,
    proceed_on_expiry: bool,
}

impl AlertStore {
    pub fn new(capacity: usize) -> Self {
        Self::with_parts(capacity, Arc::new(EventLog::new()), Arc::new(SystemClock), false)
    }

    pub fn with_parts(capacity: usize, log: Arc<EventLog>, clock: Arc<dyn Clock>, proceed_on_expiry: bool) -> Self {
        Self {
            state: Mutex::new(State {
                alerts: BTreeMap::new(),
                ledger: QuotaLedger::new(capacity),
                iteration: 0,
                next_id: 1,
            }),
            log,
            clock,
            proceed_on_expiry,
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("alert store poisoned")
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn proceed_on_expiry(&self) -> bool {
        self.proceed_on_expiry
    }

    pub(crate) fn emit(&self, kind: EventKind, alert_id: Option<&str>, trajectory_id: &str, detail: serde_json::Value) {
        self.log.append(event(self.clock.as_ref(), kind, alert_id, trajectory_id, detail));
    }

    /// Starts a new iteration with a fresh quota.
    pub fn begin_iteration(&self, iteration: u32, capacity: usize) {
        let mut st = self.lock();
        st.iteration = iteration;
        st.ledger = QuotaLedger::new(capacity);
        self.emit(
            EventKind::IterationStarted,
            None,
            "",
            json!({"iteration": iteration, "capacity": capacity as u64}),
        );
    }

    pub fn iteration(&self) -> u32 {
        self.lock().iteration
    }

    pub fn quota(&self) -> QuotaLedger {
        self.lock().ledger.clone()
    }

    pub fn get(&self, alert_id: &str) -> Option<Alert> {
        self.lock().alerts.get(alert_id).cloned()
    }

    /// Alerts ordered by id, optionally filtered by state.
    pub fn list(&self, state: Option<AlertState>) -> Vec<Alert> {
        self.lock()
            .alerts
            .values()
            .filter(|a| state.is_none_or(|s| a.state == s))
            .cloned()
            .collect()
    }

    /// Open or blocking-expired alert holding `trajectory_id`, if any.
    pub fn blocking_alert(&self, trajectory_id: &str) -> Option<Alert> {
        let st = self.lock();
        st.alerts
            .values()
            .filter(|a| a.trajectory_id() == trajectory_id)
            .find(|a| a.state == AlertState::Open || (a.state == AlertState::ExpiredQuota && !self.proceed_on_expiry))
            .cloned()
    }

    pub fn raise(&self, snapshot: Trajectory, pending_action: &str, verdict: DetectorVerdict, halted: bool) -> Alert {
        let mut st = self.lock();
        let alert_id = format!("alert-{:06}", st.next_id);
        st.next_id += 1;
        let alert = Alert {
            alert_id: alert_id.clone(),
            trajectory: snapshot,
            pending_action: pending_action.to_string(),
            verdict,
            state: AlertState::Open,
            halted,
            feedback: None,
            created_at: self.clock.now(),
            resolved_at: None,
        };
        self.emit(
            EventKind::AlertRaised,
            Some(&alert_id),
            alert.trajectory_id(),
            json!({
                "action": pending_action,
                "halted": halted,
                "detector": alert.verdict.detector_name,
                "score": alert.verdict.score,
            }),
        );
        st.alerts.insert(alert_id, alert.clone());
        alert
    }

    pub(crate) fn record_execute(&self, trajectory_id: &str, action: &str, alert_id: Option<&str>, on_expiry: bool) {
        let mut detail = json!({"action": action});
        if on_expiry {
            detail["on_expiry"] = json!(true);
        }
        self.emit(EventKind::Execute, alert_id, trajectory_id, detail);
    }

    fn expire(&self, st: &mut State, alert_id: &str, misaligned: Option<bool>) -> Alert {
        let now = self.clock.now();
        let alert = st.alerts.get_mut(alert_id).expect("alert exists");
        alert.state = AlertState::ExpiredQuota;
        alert.resolved_at = Some(now);
        let mut detail = json!({"proceed": self.proceed_on_expiry});
        if let Some(m) = misaligned {
            detail["misaligned"] = json!(m);
        }
        let alert = alert.clone();
        self.emit(EventKind::AlertExpired, Some(alert_id), alert.trajectory_id(), detail);
        if self.proceed_on_expiry {
            self.record_execute(alert.trajectory_id(), &alert.pending_action, Some(alert_id), true);
        }
        alert
    }

    /// `batch` marks consumption by an oracle pass that saw every open alert,
    /// the only setting where false-positive-first ordering can be enforced.
    fn settle(&self, st: &mut State, alert_id: &str, misaligned: bool, feedback: Option<Feedback>, batch: bool) -> Alert {
        let fp = !misaligned;
        assert!(st.ledger.try_consume(alert_id, fp), "caller checked quota");
        let now = self.clock.now();
        let alert = st.alerts.get_mut(alert_id).expect("alert exists");
        let traj = alert.trajectory_id().to_string();
        self.emit(EventKind::QuotaConsumed, Some(alert_id), &traj, json!({"false_positive": fp, "batch": batch}));
        alert.state = if misaligned {
            AlertState::ResolvedMisaligned
        } else {
            AlertState::ResolvedAligned
        };
        alert.resolved_at = Some(now);
        alert.feedback = if misaligned {
            Some(feedback.unwrap_or_else(|| Feedback::binary(super::alert::FeedbackSource::Human)))
        } else {
            None
        };
        let alert = alert.clone();
        self.emit(
            EventKind::AlertResolved,
            Some(alert_id),
            &traj,
            json!({"state": alert.state.as_str(), "feedback_kind": alert.feedback.as_ref().map(|f| f.kind)}),
        );
        if !misaligned {
            self.record_execute(&traj, &alert.pending_action, Some(alert_id), false);
        }
        alert
    }

    /// Applies one reviewer verdict. Consumes a quota unit; with the quota
    /// spent the alert expires instead and `QuotaExhausted` is returned.
    pub fn resolve(&self, alert_id: &str, misaligned: bool, feedback: Option<Feedback>) -> Result<Alert, GateError> {
        let mut st = self.lock();
        let alert = st.alerts.get(alert_id).ok_or_else(|| GateError::UnknownAlert(alert_id.to_string()))?;
        if alert.state != AlertState::Open {
            return Err(GateError::NotOpen(alert_id.to_string()));
        }
        if st.ledger.is_exhausted() {
            self.expire(&mut st, alert_id, Some(misaligned));
            return Err(GateError::QuotaExhausted(alert_id.to_string()));
        }
        Ok(self.settle(&mut st, alert_id, misaligned, feedback, false))
    }

    /// Oracle pass over every open alert: all are judged, then quota is
    /// spent on false positives first, then on true positives, each group
    /// in alert-id order. Alerts left without quota expire. `feedback` is
    /// only invoked for misaligned alerts that receive quota.
    pub fn review_open(
        &self,
        mut judge: impl FnMut(&Alert) -> Result<bool, GateError>,
        mut feedback: impl FnMut(&Alert) -> Result<Feedback, GateError>,
    ) -> Result<Vec<Review>, GateError> {
        let mut st = self.lock();
        let open: Vec<Alert> = st.alerts.values().filter(|a| a.state == AlertState::Open).cloned().collect();
        let mut judged = Vec::with_capacity(open.len());
        for a in open {
            let m = judge(&a)?;
            judged.push((m, a));
        }
        // stable: false (aligned) sorts before true
        judged.sort_by_key(|(m, _)| *m);
        let mut out = Vec::with_capacity(judged.len());
        for (misaligned, a) in judged {
            let alert = if st.ledger.is_exhausted() {
                self.expire(&mut st, &a.alert_id, Some(misaligned))
            } else {
                let fb = if misaligned { Some(feedback(&a)?) } else { None };
                self.settle(&mut st, &a.alert_id, misaligned, fb, true)
            };
            out.push(Review { alert, misaligned });
        }
        Ok(out)
    }

    /// Expires every alert still open, e.g. when an iteration ends.
    pub fn expire_open(&self) -> Vec<Alert> {
        let mut st = self.lock();
        let ids: Vec<String> = st
            .alerts
            .values()
            .filter(|a| a.state == AlertState::Open)
            .map(|a| a.alert_id.clone())
            .collect();
        ids.iter().map(|id| self.expire(&mut st, id, None)).collect()
    }

    pub(crate) fn note_detector_error(&self, trajectory_id: &str, message: &str) {
        self.emit(EventKind::DetectorError, None, trajectory_id, json!({"message": message}));
    }

    pub(crate) fn note(&self, kind: EventKind, trajectory_id: &str, detail: serde_json::Value) {
        self.emit(kind, None, trajectory_id, detail);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Benchmark, TaskSpec, TrajectoryStatus};
    use crate::orchestrator::events::{check_invariants, LogicalClock};
    use crate::orchestrator::FeedbackSource;

    fn store(capacity: usize) -> AlertStore {
        AlertStore::with_parts(capacity, Arc::new(EventLog::new()), Arc::new(LogicalClock::default()), false)
    }

    fn traj(id: &str) -> Trajectory {
        let mut t = Trajectory::new(id, TaskSpec::new(id, Benchmark::Webshop, "buy a bench"), TrajectoryStatus::InProgress);
        t.push(None, "search[bench]", "results");
        t
    }

    fn verdict() -> DetectorVerdict {
        DetectorVerdict::binary("test", true, Vec::new())
    }

    #[test]
    fn resolve_paths() {
        let s = store(1);
        s.begin_iteration(0, 1);
        let a = s.raise(traj("t1"), "click[Buy Now]", verdict(), false);
        let b = s.raise(traj("t2"), "click[Buy Now]", verdict(), false);
        assert_eq!(a.alert_id, "alert-000001");
        let r = s.resolve(&a.alert_id, true, None).unwrap();
        assert_eq!(r.state, AlertState::ResolvedMisaligned);
        assert_eq!(r.feedback.unwrap().payload, "misaligned");
        assert!(matches!(s.resolve(&a.alert_id, false, None), Err(GateError::NotOpen(_))));
        assert!(matches!(s.resolve(&b.alert_id, true, None), Err(GateError::QuotaExhausted(_))));
        assert_eq!(s.get(&b.alert_id).unwrap().state, AlertState::ExpiredQuota);
        assert!(matches!(s.resolve("nope", false, None), Err(GateError::UnknownAlert(_))));
        assert_eq!(s.quota().consumed, 1);
        assert!(s.blocking_alert("t2").is_some());
        assert!(check_invariants(&s.log().snapshot()).is_empty());
    }

    #[test]
    fn aligned_resolution_executes_and_logs_fp() {
        let s = store(3);
        s.begin_iteration(0, 3);
        let a = s.raise(traj("t1"), "click[Buy Now]", verdict(), false);
        let r = s.resolve(&a.alert_id, false, None).unwrap();
        assert_eq!(r.state, AlertState::ResolvedAligned);
        assert!(r.feedback.is_none());
        assert!(s.quota().log[0].was_false_positive);
        let kinds: Vec<EventKind> = s.log().snapshot().iter().map(|e| e.event).collect();
        assert_eq!(kinds.last(), Some(&EventKind::Execute));
        assert!(s.blocking_alert("t1").is_none());
    }

    #[test]
    fn review_spends_quota_on_false_positives_first() {
        let s = store(2);
        s.begin_iteration(0, 2);
        for i in 0..4 {
            s.raise(traj(&format!("t{i}")), "click[Buy Now]", verdict(), false);
        }
        // t2 and t3 are aligned
        let reviews = s
            .review_open(
                |a| Ok(!matches!(a.trajectory_id(), "t2" | "t3")),
                |_| Ok(Feedback::binary(FeedbackSource::SimulatedOracle)),
            )
            .unwrap();
        let states: Vec<(String, AlertState)> =
            reviews.iter().map(|r| (r.alert.trajectory_id().to_string(), r.alert.state)).collect();
        assert_eq!(
            states,
            vec![
                ("t2".into(), AlertState::ResolvedAligned),
                ("t3".into(), AlertState::ResolvedAligned),
                ("t0".into(), AlertState::ExpiredQuota),
                ("t1".into(), AlertState::ExpiredQuota),
            ]
        );
        assert!(s.quota().log.iter().all(|c| c.was_false_positive));
        assert!(check_invariants(&s.log().snapshot()).is_empty());
    }

    #[test]
    fn concurrent_resolves_yield_one_winner() {
        let s = Arc::new(store(10));
        s.begin_iteration(0, 10);
        let a = s.raise(traj("t1"), "click[Buy Now]", verdict(), false);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let s = s.clone();
                let id = a.alert_id.clone();
                std::thread::spawn(move || s.resolve(&id, true, None).is_ok())
            })
            .collect();
        let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|w| *w).count();
        assert_eq!(wins, 1);
        assert_eq!(s.quota().consumed, 1);
    }
}
