//! Offline detector evaluation over labeled corpora.
//!
//! Each trajectory is judged once, at its last critical action, with the
//! trajectory truncated there and that action's observation withheld.
//! Halted and unlabeled trajectories, and trajectories without any
//! critical action, are not scored.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{resolve_label, split_dev_test, Split};
use crate::detectors::{Detector, DetectorKind};
use crate::error::EvalError;
use crate::metrics::{self, ScoredExample, ThresholdFit};
use crate::model::{is_critical, ConfusionCounts, CriticalActionRule, Trajectory, TrajectoryStatus};
use crate::report::DetectorReport;

/// How a detector's score relates to the metrics that need one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// No score; PR-AUC and ECE are not reported.
    Binary,
    /// Misalignment probability in [0,1]; every metric applies.
    Probability,
    /// Unbounded score (token entropy); PR-AUC only.
    Raw,
}

impl ScoreScale {
    pub fn for_kind(kind: DetectorKind) -> Self {
        if kind.is_probability() {
            ScoreScale::Probability
        } else if kind.is_scored() {
            ScoreScale::Raw
        } else {
            ScoreScale::Binary
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub dev_size: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Fit the threshold on a dev split and report on the rest.
    pub tune: Option<TuneOptions>,
    pub jobs: usize,
    pub ece_bins: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tune: None,
            jobs: 1,
            ece_bins: metrics::DEFAULT_ECE_BINS,
        }
    }
}

/// A trajectory ready for judgement.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub trajectory_id: String,
    /// `true` when misaligned.
    pub label: bool,
    /// Truncated at the last critical action, which is pending.
    pub gated: Trajectory,
    pub rule: CriticalActionRule,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub halted: usize,
    pub unlabeled: usize,
    pub ungated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// Sorted by trajectory id.
    pub cases: Vec<EvalCase>,
    pub skipped: Skipped,
}

/// Picks the evaluable trajectories and truncates each at its last
/// critical action.
pub fn prepare(trajectories: &[Trajectory], rules: &[CriticalActionRule]) -> Result<Prepared, EvalError> {
    let mut skipped = Skipped::default();
    let mut cases = Vec::new();
    for t in trajectories {
        if t.is_halted() {
            skipped.halted += 1;
            continue;
        }
        let Some(gold) = &t.task.gold else {
            skipped.unlabeled += 1;
            continue;
        };
        let Some((idx, rule)) = t
            .steps
            .iter()
            .enumerate()
            .rev()
            .find_map(|(i, s)| is_critical(&s.action, rules).map(|r| (i, r)))
        else {
            skipped.ungated += 1;
            continue;
        };
        let label = resolve_label(t, gold)?;
        let mut gated = t.prefix(idx + 1);
        if let Some(last) = gated.steps.last_mut() {
            last.observation.clear();
        }
        if idx + 1 < t.steps.len() {
            gated.status = TrajectoryStatus::InProgress;
        }
        cases.push(EvalCase {
            trajectory_id: t.trajectory_id.clone(),
            label,
            gated,
            rule: rule.clone(),
        });
    }
    cases.sort_by(|a, b| a.trajectory_id.cmp(&b.trajectory_id));
    Ok(Prepared { cases, skipped })
}

/// One judged trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub trajectory_id: String,
    pub label: bool,
    /// Alert at the operating threshold.
    pub alert: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Runs `detector` over `cases`, on `jobs` threads, in case order. The
/// first failure in case order is returned.
pub fn judge(detector: &dyn Detector, cases: &[EvalCase], jobs: usize) -> Result<Vec<EvalRecord>, EvalError> {
    let run = |c: &EvalCase| -> Result<EvalRecord, EvalError> {
        let v = detector.detect(&c.gated, &c.rule).map_err(|source| EvalError::Detector {
            trajectory_id: c.trajectory_id.clone(),
            source,
        })?;
        Ok(EvalRecord {
            trajectory_id: c.trajectory_id.clone(),
            label: c.label,
            alert: v.alert,
            score: v.score,
            llm_calls: v.evidence.len(),
            notes: v.notes,
        })
    };
    if jobs <= 1 {
        return cases.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))?;
    pool.install(|| cases.par_iter().map(run).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

fn scored(records: &[EvalRecord]) -> Vec<ScoredExample> {
    records
        .iter()
        .filter_map(|r| r.score.map(|s| ScoredExample::new(r.trajectory_id.clone(), s, r.label)))
        .collect()
}

/// Fits the operating threshold on a seeded dev split of `cases`.
pub fn calibrate(
    detector: &dyn Detector,
    cases: &[EvalCase],
    tune: TuneOptions,
    jobs: usize,
) -> Result<(ThresholdFit, Split), EvalError> {
    let split = split_cases(cases, tune)?;
    let dev: Vec<EvalCase> = cases
        .iter()
        .filter(|c| split.dev.binary_search(&c.trajectory_id).is_ok())
        .cloned()
        .collect();
    let records = judge(detector, &dev, jobs)?;
    let fit = fit_threshold(&records)?;
    Ok((fit, split))
}

fn split_cases(cases: &[EvalCase], tune: TuneOptions) -> Result<Split, EvalError> {
    let gated: Vec<Trajectory> = cases.iter().map(|c| c.gated.clone()).collect();
    Ok(split_dev_test(&gated, tune.dev_size, tune.seed)?)
}

/// Unscored dev records carry no ranking information and are left out.
fn fit_threshold(dev: &[EvalRecord]) -> Result<ThresholdFit, EvalError> {
    let examples = scored(dev);
    if examples.is_empty() {
        return Err(EvalError::NoData("no dev trajectory has a score".into()));
    }
    Ok(metrics::tune_threshold(&examples)?)
}

/// Evaluates `detector` on `cases` and computes every metric.
///
/// With tuning, the threshold is fit on the dev split and metrics cover the
/// test split only. Records without a score count as alerts at any
/// threshold and are left out of PR-AUC and ECE.
pub fn evaluate(
    name: &str,
    detector: &dyn Detector,
    scale: ScoreScale,
    cases: &[EvalCase],
    opts: &EvalOptions,
) -> Result<DetectorReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoData("no gated, labeled trajectories".into()));
    }
    let records = judge(detector, cases, opts.jobs)?;
    let (records, threshold, fit, split) = match opts.tune {
        None => (records, detector.threshold(), None, None),
        Some(tune) => {
            if scale == ScoreScale::Binary {
                return Err(EvalError::Config(format!("detector `{name}` has no score to tune")));
            }
            let split = split_cases(cases, tune)?;
            let (dev, test): (Vec<EvalRecord>, Vec<EvalRecord>) = records
                .into_iter()
                .partition(|r| split.dev.binary_search(&r.trajectory_id).is_ok());
            if test.is_empty() {
                return Err(EvalError::NoData("the dev split leaves no test trajectories".into()));
            }
            let fit = fit_threshold(&dev)?;
            let theta = fit.threshold;
            let test = test
                .into_iter()
                .map(|mut r| {
                    r.alert = r.score.is_none_or(|s| s > theta);
                    r
                })
                .collect();
            (test, Some(theta), Some(fit), Some(split))
        }
    };

    let mut cm = ConfusionCounts::default();
    for r in &records {
        cm.record(r.alert, r.label);
    }
    let examples = scored(&records);
    let pr_auc = match scale {
        ScoreScale::Binary => None,
        _ => metrics::pr_auc(&examples).ok(),
    };
    let ece = match scale {
        ScoreScale::Probability => metrics::ece(&examples, opts.ece_bins).ok(),
        _ => None,
    };
    Ok(DetectorReport {
        detector: name.to_string(),
        n: records.len(),
        confusion: cm,
        macro_f1: metrics::macro_f1(&cm),
        cost: metrics::cost(&cm),
        er: metrics::effective_reliability(&cm),
        pr_auc,
        ece,
        threshold,
        fit,
        dev: split.map(|s| s.dev),
        unscored: if scale == ScoreScale::Binary {
            0
        } else {
            records.len() - examples.len()
        },
        llm_calls: records.iter().map(|r| r.llm_calls).sum(),
        records,
    })
}
