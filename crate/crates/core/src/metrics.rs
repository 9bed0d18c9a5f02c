//! Detector quality metrics and threshold tuning.
//!
//! Misalignment is the positive class throughout. Predictions from scores
//! use a strict comparison, `score > threshold`.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::model::ConfusionCounts;

pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub trajectory_id: String,
    pub score: f64,
    /// `true` when the trajectory is misaligned.
    pub label: bool,
}

impl ScoredExample {
    pub fn new(trajectory_id: impl Into<String>, score: f64, label: bool) -> Self {
        Self {
            trajectory_id: trajectory_id.into(),
            score,
            label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    #[serde(with = "float_or_inf")]
    pub threshold: f64,
    pub dev_macro_f1: f64,
    pub dev_size: usize,
}

pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<ConfusionCounts, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        cm.record(p, l);
    }
    Ok(cm)
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Mean of the positive-class and negative-class F1. A class whose F1
/// denominator is zero contributes 0.
pub fn macro_f1(cm: &ConfusionCounts) -> f64 {
    let pos = f1(cm.tp, cm.fp, cm.fn_);
    let neg = f1(cm.tn, cm.fn_, cm.fp);
    (pos + neg) / 2.0
}

pub fn cost(cm: &ConfusionCounts) -> u64 {
    cm.fp + cm.fn_
}

/// `(tp - fp) / (tp + fp)`, or 0 when no alerts were raised.
pub fn effective_reliability(cm: &ConfusionCounts) -> f64 {
    let alerts = cm.tp + cm.fp;
    if alerts == 0 {
        0.0
    } else {
        (cm.tp as f64 - cm.fp as f64) / alerts as f64
    }
}

fn check_finite(examples: &[ScoredExample]) -> Result<(), MetricsError> {
    match examples.iter().find(|e| !e.score.is_finite()) {
        Some(e) => Err(MetricsError::ScoreOutOfRange(e.score)),
        None => Ok(()),
    }
}

/// Sorted descending by score.
fn ranked(examples: &[ScoredExample]) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = examples.iter().map(|e| (e.score, e.label)).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    v
}

/// Average precision: precision integrated over recall with step
/// interpolation, one cut-point per distinct score (ties grouped).
pub fn pr_auc(examples: &[ScoredExample]) -> Result<f64, MetricsError> {
    check_finite(examples)?;
    let positives = examples.iter().filter(|e| e.label).count();
    if positives == 0 || positives == examples.len() {
        return Err(MetricsError::Undefined("pr_auc needs both classes"));
    }
    let ranked = ranked(examples);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let score = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == score {
            if ranked[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Index of the equal-width bin holding `conf`; right edges are inclusive
/// and 0.0 falls in the first bin.
fn bin_index(conf: f64, bins: usize) -> usize {
    let n = bins as f64;
    let mut k = ((conf * n).ceil() as usize).saturating_sub(1).min(bins - 1);
    if k > 0 && conf <= k as f64 / n {
        k -= 1;
    }
    if k + 1 < bins && conf > (k + 1) as f64 / n {
        k += 1;
    }
    k
}

/// Expected calibration error over the confidence of the predicted class,
/// `max(score, 1 - score)`, with predicted class `score > 0.5`.
pub fn ece(examples: &[ScoredExample], bins: usize) -> Result<f64, MetricsError> {
    if examples.is_empty() {
        return Err(MetricsError::Empty);
    }
    if bins == 0 {
        return Err(MetricsError::Undefined("ece needs at least one bin"));
    }
    if let Some(e) = examples.iter().find(|e| !(0.0..=1.0).contains(&e.score)) {
        return Err(MetricsError::ScoreOutOfRange(e.score));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    for e in examples {
        let predicted = e.score > 0.5;
        let conf = e.score.max(1.0 - e.score);
        let k = bin_index(conf, bins);
        count[k] += 1;
        conf_sum[k] += conf;
        if predicted == e.label {
            correct[k] += 1;
        }
    }
    let n = examples.len() as f64;
    Ok((0..bins)
        .filter(|&k| count[k] > 0)
        .map(|k| {
            let c = count[k] as f64;
            (c / n) * (correct[k] as f64 / c - conf_sum[k] / c).abs()
        })
        .sum())
}

pub fn predict(examples: &[ScoredExample], threshold: f64) -> Vec<bool> {
    examples.iter().map(|e| e.score > threshold).collect()
}

fn macro_f1_at(examples: &[ScoredExample], threshold: f64) -> f64 {
    let mut cm = ConfusionCounts::default();
    for e in examples {
        cm.record(e.score > threshold, e.label);
    }
    macro_f1(&cm)
}

/// Midpoint of `lo < hi` that still separates them; adjacent floats fall
/// back to `lo`, which induces the same partition under `score > θ`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = (lo + hi) / 2.0;
    if mid > lo && mid < hi {
        mid
    } else {
        lo
    }
}

/// Macro-F1-maximizing threshold over midpoints of consecutive distinct
/// scores plus the ±∞ sentinels. Ties go to the smaller threshold.
pub fn tune_threshold(dev: &[ScoredExample]) -> Result<ThresholdFit, MetricsError> {
    check_finite(dev)?;
    let positives = dev.iter().filter(|e| e.label).count();
    if positives == 0 || positives == dev.len() {
        return Err(MetricsError::Undefined("threshold tuning needs both classes in the dev set"));
    }
    let mut scores: Vec<f64> = dev.iter().map(|e| e.score).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut candidates = Vec::with_capacity(scores.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    candidates.extend(scores.windows(2).map(|w| midpoint(w[0], w[1])));
    candidates.push(f64::INFINITY);

    let mut best = ThresholdFit {
        threshold: f64::NEG_INFINITY,
        dev_macro_f1: f64::NEG_INFINITY,
        dev_size: dev.len(),
    };
    for theta in candidates {
        let f = macro_f1_at(dev, theta);
        if f > best.dev_macro_f1 {
            best.threshold = theta;
            best.dev_macro_f1 = f;
        }
    }
    Ok(best)
}

/// Serializes non-finite thresholds as the strings `"-inf"` / `"inf"`.
pub mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad threshold {other:?}"))),
            },
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(Wrap).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}
