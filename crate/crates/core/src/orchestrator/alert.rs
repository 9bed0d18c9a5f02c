use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{DetectorVerdict, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertState {
    Open,
    ResolvedMisaligned,
    ResolvedAligned,
    ExpiredQuota,
}

impl AlertState {
    pub const ALL: [AlertState; 4] = [
        AlertState::Open,
        AlertState::ResolvedMisaligned,
        AlertState::ResolvedAligned,
        AlertState::ExpiredQuota,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlertState::Open => "open",
            AlertState::ResolvedMisaligned => "resolved_misaligned",
            AlertState::ResolvedAligned => "resolved_aligned",
            AlertState::ExpiredQuota => "expired_quota",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != AlertState::Open
    }

    /// The only legal moves are out of `open`.
    pub fn can_transition(self, to: AlertState) -> bool {
        self == AlertState::Open && to != AlertState::Open
    }
}

impl fmt::Display for AlertState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlertState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlertState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown alert state `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    #[default]
    Binary,
    NaturalLanguage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Human,
    SimulatedOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackKind,
    /// `"misaligned"` for binary feedback, free text otherwise.
    pub payload: String,
    pub source: FeedbackSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Feedback {
    pub fn binary(source: FeedbackSource) -> Self {
        Self {
            kind: FeedbackKind::Binary,
            payload: "misaligned".into(),
            source,
            notes: Vec::new(),
        }
    }

    pub fn natural_language(text: impl Into<String>, source: FeedbackSource) -> Self {
        Self {
            kind: FeedbackKind::NaturalLanguage,
            payload: text.into(),
            source,
            notes: Vec::new(),
        }
    }
}

/// A critical action held for review.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    /// Trajectory up to, but excluding, the pending action.
    pub trajectory: Trajectory,
    pub pending_action: String,
    pub verdict: DetectorVerdict,
    pub state: AlertState,
    /// Raised because the trajectory halted rather than by a detector.
    #[serde(default)]
    pub halted: bool,
    pub feedback: Option<Feedback>,
    pub created_at: DateTime<Utc>,
    pub resolved_at: Option<DateTime<Utc>>,
}

impl Alert {
    pub fn trajectory_id(&self) -> &str {
        &self.trajectory.trajectory_id
    }

    /// Trajectory with the held action appended as its final step.
    pub fn full_trajectory(&self) -> Trajectory {
        self.trajectory.with_pending_action(&self.pending_action)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consumption {
    pub alert_id: String,
    pub was_false_positive: bool,
}

/// Per-iteration inspection budget.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaLedger {
    pub capacity: usize,
    pub consumed: usize,
    pub log: Vec<Consumption>,
}

impl QuotaLedger {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            consumed: 0,
            log: Vec::new(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX)
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.consumed
    }

    pub fn is_exhausted(&self) -> bool {
        self.consumed >= self.capacity
    }

    /// Records one inspection; `false` when the budget is already spent.
    pub fn try_consume(&mut self, alert_id: &str, was_false_positive: bool) -> bool {
        if self.is_exhausted() {
            return false;
        }
        self.consumed += 1;
        self.log.push(Consumption {
            alert_id: alert_id.to_string(),
            was_false_positive,
        });
        true
    }
}
