//! Baseline detectors: direct prompting, self-consistency, token
//! probability, token entropy and multi-step evaluation.

use super::{parse, parse_choice, Aggregation, DetectorContext};
use crate::error::DetectorError;
use crate::gateway::{Message, SELF_CONSISTENCY_TEMPERATURE};
use crate::model::{behavior_transcript, CriticalActionRule, DetectorVerdict, Exchange, Placement, Trajectory};
use crate::prompts::Family;

pub(crate) const PARSE_FAILURE: &str = "verdict parse failure";

fn render_baseline(
    ctx: &DetectorContext,
    traj: &Trajectory,
    family: Family,
    stage: &str,
    include_thoughts: bool,
) -> Result<String, DetectorError> {
    let transcript = behavior_transcript(traj, include_thoughts)?;
    let template = ctx.prompts.get(traj.task.benchmark, family, stage)?;
    Ok(template.render(&[("instruction", &traj.task.instruction), ("trajectory", &transcript)])?)
}

/// One direct-prompt judgement; `None` when the reply never parsed.
fn direct_vote(
    ctx: &DetectorContext,
    traj: &Trajectory,
    include_thoughts: bool,
    sample: Option<u32>,
    evidence: &mut Vec<Exchange>,
) -> Result<Option<bool>, DetectorError> {
    let prompt = render_baseline(ctx, traj, Family::Direct, "main", include_thoughts)?;
    let mut req = ctx.gateway.request(vec![Message::user(prompt)]);
    let role = match sample {
        Some(i) => {
            req = req.temperature(SELF_CONSISTENCY_TEMPERATURE).sample(i);
            format!("direct:sample{i}")
        }
        None => "direct".to_string(),
    };
    let benchmark = traj.task.benchmark;
    let (label, _) = ctx.ask(&role, &req, evidence, |r| parse::direct_label(benchmark, &r.text))?;
    Ok(label)
}

pub fn direct_prompt(
    ctx: &DetectorContext,
    traj: &Trajectory,
    include_thoughts: bool,
) -> Result<DetectorVerdict, DetectorError> {
    let mut evidence = Vec::new();
    let label = direct_vote(ctx, traj, include_thoughts, None, &mut evidence)?;
    Ok(match label {
        Some(alert) => DetectorVerdict::binary("direct", alert, evidence),
        None => DetectorVerdict::binary("direct", true, evidence).note(PARSE_FAILURE),
    })
}

/// `m` direct-prompt samples at temperature 0.7; alerts when at least half
/// the votes alert. Unparseable votes count as alerts.
pub fn self_consistency(
    ctx: &DetectorContext,
    traj: &Trajectory,
    m: u32,
    include_thoughts: bool,
) -> Result<DetectorVerdict, DetectorError> {
    if m == 0 {
        return Err(DetectorError::Config("self-consistency needs m >= 1".into()));
    }
    let mut evidence = Vec::new();
    let mut alerts = 0u32;
    let mut failures = 0u32;
    for i in 0..m {
        match direct_vote(ctx, traj, include_thoughts, Some(i), &mut evidence)? {
            Some(true) => alerts += 1,
            Some(false) => {}
            None => {
                alerts += 1;
                failures += 1;
            }
        }
    }
    let mut v = DetectorVerdict::binary("self-consistency", 2 * alerts >= m, evidence)
        .note(format!("alert votes {alerts}/{m}"));
    if failures > 0 {
        v = v.note(format!("{failures} vote(s) unparseable"));
    }
    Ok(v)
}

struct FalseProbability {
    p_false: f64,
    fallback: bool,
}

/// Probability of the "B. False" option. On ALFWorld-style anywhere rules a
/// False completion answer is followed by the progress question, which then
/// decides.
fn false_probability(
    ctx: &DetectorContext,
    traj: &Trajectory,
    rule: &CriticalActionRule,
    include_thoughts: bool,
    evidence: &mut Vec<Exchange>,
) -> Result<Option<FalseProbability>, DetectorError> {
    let prompt = render_baseline(ctx, traj, Family::TokenProb, "completion", include_thoughts)?;
    let req = ctx.gateway.request(vec![Message::user(prompt.clone())]).logprobs(true);
    let (first, reply) = ctx.ask("completion", &req, evidence, |r| parse_choice(r, true))?;
    let Some((p_true, fallback)) = first else {
        return Ok(None);
    };
    let progress = ctx.prompts.get(traj.task.benchmark, Family::TokenProb, "progress");
    if 1.0 - p_true > 0.5 && rule.placement == Placement::Anywhere {
        if let Ok(progress) = progress {
            let follow_up = progress.render(&[("instruction", &traj.task.instruction)])?;
            let req = ctx
                .gateway
                .request(vec![Message::user(prompt), Message::assistant(reply), Message::user(follow_up)])
                .logprobs(true);
            let (second, _) = ctx.ask("progress", &req, evidence, |r| parse_choice(r, true))?;
            return Ok(second.map(|(p, fb)| FalseProbability {
                p_false: 1.0 - p,
                fallback: fallback || fb,
            }));
        }
    }
    Ok(Some(FalseProbability {
        p_false: 1.0 - p_true,
        fallback,
    }))
}

fn scored_or_failure(name: &str, score: Option<(f64, bool)>, threshold: f64, evidence: Vec<Exchange>) -> DetectorVerdict {
    match score {
        Some((s, fallback)) => {
            let v = DetectorVerdict::scored(name, s, threshold, evidence);
            if fallback {
                v.note("logprob choice unavailable; used verbalized answer")
            } else {
                v
            }
        }
        None => {
            let mut v = DetectorVerdict::binary(name, true, evidence).note(PARSE_FAILURE);
            v.threshold = Some(threshold);
            v
        }
    }
}

/// Score is p(B. False); alerts when it exceeds `threshold`.
pub fn token_probability(
    ctx: &DetectorContext,
    traj: &Trajectory,
    rule: &CriticalActionRule,
    threshold: f64,
    include_thoughts: bool,
) -> Result<DetectorVerdict, DetectorError> {
    let mut evidence = Vec::new();
    let p = false_probability(ctx, traj, rule, include_thoughts, &mut evidence)?;
    Ok(scored_or_failure(
        "token-prob",
        p.map(|p| (p.p_false, p.fallback)),
        threshold,
        evidence,
    ))
}

/// Binary entropy in nats with 0·ln 0 = 0.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    term(p) + term(1.0 - p)
}

/// Score is H(p) of the False probability, unnormalized.
pub fn token_entropy(
    ctx: &DetectorContext,
    traj: &Trajectory,
    rule: &CriticalActionRule,
    threshold: f64,
    include_thoughts: bool,
) -> Result<DetectorVerdict, DetectorError> {
    let mut evidence = Vec::new();
    let p = false_probability(ctx, traj, rule, include_thoughts, &mut evidence)?;
    let v = scored_or_failure(
        "token-entropy",
        p.as_ref().map(|p| (binary_entropy(p.p_false), p.fallback)),
        threshold,
        evidence,
    );
    Ok(match p {
        Some(p) => v.note(format!("p(False) = {:.6}", p.p_false)),
        None => v,
    })
}

/// Per-step correctness probabilities aggregated by `agg`; score = 1 − agg.
pub fn multi_step(
    ctx: &DetectorContext,
    traj: &Trajectory,
    agg: Aggregation,
    threshold: f64,
    include_thoughts: bool,
) -> Result<DetectorVerdict, DetectorError> {
    let prompt = render_baseline(ctx, traj, Family::MultiStep, "main", include_thoughts)?;
    let n = traj.steps.len();
    let req = ctx.gateway.request(vec![Message::user(prompt)]);
    let mut evidence = Vec::new();
    let (steps, _) = ctx.ask("multi-step", &req, &mut evidence, |r| {
        let steps = parse::step_probabilities(&r.text, n);
        steps.iter().any(Option::is_some).then_some(steps)
    })?;
    let Some(steps) = steps else {
        return Ok(scored_or_failure("multi-step", None, threshold, evidence));
    };
    let (values, missing) = impute_mean(&steps);
    let score = (1.0 - agg.apply(&values)).clamp(0.0, 1.0);
    let mut v = DetectorVerdict::scored("multi-step", score, threshold, evidence)
        .note(format!("aggregation {}", agg.as_str()));
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|i| (i + 1).to_string()).collect();
        v = v.note(format!("imputed steps {} with mean", list.join(",")));
    }
    Ok(v)
}

/// Fills `None` entries with the mean of the present ones. Returns the
/// completed vector and the zero-based indices that were imputed.
pub(crate) fn impute_mean(steps: &[Option<f64>]) -> (Vec<f64>, Vec<usize>) {
    let present: Vec<f64> = steps.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len().max(1) as f64;
    let missing = steps.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
    (steps.iter().map(|s| s.unwrap_or(mean)).collect(), missing)
}
