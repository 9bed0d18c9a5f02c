//! InferAct: infer the task the agent is pursuing from its behavior, then
//! check whether that task entails (or is progressing toward) the user's.

use serde::{Deserialize, Serialize};

use super::baselines::PARSE_FAILURE;
use super::{parse, parse_choice, DetectorContext, ProbCombine, Variant};
use crate::error::DetectorError;
use crate::gateway::Message;
use crate::model::{behavior_transcript, CriticalActionRule, DetectorVerdict, Exchange, Placement, Trajectory};
use crate::prompts::Family;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferredTask {
    pub text: String,
    pub rationale: String,
}

/// Outcome of a completion or progress question.
#[derive(Clone, Debug, PartialEq)]
pub struct StageAnswer {
    /// p(True); 0 or 1 for the verbalized variant.
    pub p_true: f64,
    /// False when the reply never parsed and the fail-safe False was used.
    pub parsed: bool,
    /// Raw reply text, replayed as the assistant turn before a follow-up.
    pub reply: String,
    /// The completion prompt, reused as the first turn of a follow-up.
    prompt: String,
}

impl StageAnswer {
    /// The boolean answer: True iff p(True) > 0.5.
    pub fn holds(&self) -> bool {
        self.p_true > 0.5
    }
}

fn transcript(traj: &Trajectory) -> Result<String, DetectorError> {
    Ok(behavior_transcript(traj, false)?)
}

/// Deduces T′ from the observable behavior (thoughts are withheld).
pub fn infer_task(
    ctx: &DetectorContext,
    traj: &Trajectory,
    evidence: &mut Vec<Exchange>,
) -> Result<InferredTask, DetectorError> {
    let action = transcript(traj)?;
    let template = ctx.prompts.get(traj.task.benchmark, Family::Inferact, "inference")?;
    let prompt = template.render(&[("action", &action)])?;
    let req = ctx.gateway.request(vec![Message::user(prompt)]);
    let benchmark = traj.task.benchmark;
    let (parsed, reply) = ctx.ask("inference", &req, evidence, |r| parse::inferred_task(benchmark, &r.text))?;
    let (text, rationale) =
        parsed.ok_or_else(|| DetectorError::Inference(format!("no inferred task in reply {:?}", truncate(&reply))))?;
    Ok(InferredTask { text, rationale })
}

fn truncate(s: &str) -> String {
    s.chars().take(120).collect()
}

fn completion_prompt(ctx: &DetectorContext, traj: &Trajectory, t_prime: &InferredTask) -> Result<String, DetectorError> {
    let action = transcript(traj)?;
    let template = ctx.prompts.get(traj.task.benchmark, Family::Inferact, "completion")?;
    Ok(template.render(&[
        ("instruction", &traj.task.instruction),
        ("action", &action),
        ("intended_task", &t_prime.text),
    ])?)
}

fn stage(
    ctx: &DetectorContext,
    role: &str,
    messages: Vec<Message>,
    variant: Variant,
    evidence: &mut Vec<Exchange>,
    prompt: String,
) -> Result<StageAnswer, DetectorError> {
    let logprobs = variant == Variant::Prob;
    let req = ctx.gateway.request(messages).logprobs(logprobs);
    let (p, reply) = ctx.ask(role, &req, evidence, |r| parse_choice(r, logprobs))?;
    Ok(StageAnswer {
        p_true: p.map(|(p, _)| p).unwrap_or(0.0),
        parsed: p.is_some(),
        reply,
        prompt,
    })
}

/// Y^c: does completing T′ entail the user's task?
pub fn verify_completion(
    ctx: &DetectorContext,
    traj: &Trajectory,
    t_prime: &InferredTask,
    variant: Variant,
    evidence: &mut Vec<Exchange>,
) -> Result<StageAnswer, DetectorError> {
    let prompt = completion_prompt(ctx, traj, t_prime)?;
    stage(ctx, "completion", vec![Message::user(prompt.clone())], variant, evidence, prompt)
}

/// Y^p: is the agent progressing toward the user's task? Sent as a follow-up
/// turn after the completion exchange.
pub fn verify_progress(
    ctx: &DetectorContext,
    traj: &Trajectory,
    t_prime: &InferredTask,
    completion: &StageAnswer,
    variant: Variant,
    evidence: &mut Vec<Exchange>,
) -> Result<StageAnswer, DetectorError> {
    let template = ctx.prompts.get(traj.task.benchmark, Family::Inferact, "progress")?;
    let follow_up = template.render(&[("instruction", &traj.task.instruction), ("intended_task", &t_prime.text)])?;
    let messages = vec![
        Message::user(completion.prompt.clone()),
        Message::assistant(completion.reply.clone()),
        Message::user(follow_up),
    ];
    stage(ctx, "progress", messages, variant, evidence, completion.prompt.clone())
}

/// Full pipeline. Terminal rules are decided by the completion check alone;
/// anywhere rules fall through to the progress check when Y^c is False.
pub fn inferact(
    ctx: &DetectorContext,
    traj: &Trajectory,
    rule: &CriticalActionRule,
    variant: Variant,
    threshold: f64,
    combine: ProbCombine,
) -> Result<DetectorVerdict, DetectorError> {
    let name = match variant {
        Variant::Verb => "inferact-verb",
        Variant::Prob => "inferact-prob",
    };
    let mut evidence = Vec::new();
    let t_prime = match infer_task(ctx, traj, &mut evidence) {
        Ok(t) => t,
        Err(DetectorError::Inference(msg)) => {
            let mut v = DetectorVerdict::binary(name, true, evidence).note(format!("inference failure: {msg}"));
            if variant == Variant::Prob {
                v.threshold = Some(threshold);
            }
            return Ok(v);
        }
        Err(e) => return Err(e),
    };

    let completion = verify_completion(ctx, traj, &t_prime, variant, &mut evidence)?;
    let mut notes = Vec::new();
    if !completion.parsed {
        notes.push(format!("{PARSE_FAILURE} (completion); treated as False"));
    }
    let progress = if rule.placement == Placement::Anywhere && !completion.holds() {
        let p = verify_progress(ctx, traj, &t_prime, &completion, variant, &mut evidence)?;
        if !p.parsed {
            notes.push(format!("{PARSE_FAILURE} (progress); treated as False"));
        }
        Some(p)
    } else {
        None
    };
    let deciding = progress.as_ref().unwrap_or(&completion);

    let mut v = match variant {
        Variant::Verb => DetectorVerdict::binary(name, !deciding.holds(), evidence),
        Variant::Prob => {
            let p = match (combine, &progress) {
                (ProbCombine::MinOfStages, Some(p)) => completion.p_true.min(p.p_true),
                _ => deciding.p_true,
            };
            DetectorVerdict::scored(name, 1.0 - p, threshold, evidence)
        }
    };
    v.inferred_task = Some(t_prime.text);
    v.notes.push(format!(
        "stages: completion{}",
        if progress.is_some() { ", progress" } else { "" }
    ));
    v.notes.extend(notes);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::registry::rules_for;
    use crate::gateway::{Gateway, ScriptedBackend, TokenLogprob};
    use crate::model::{Benchmark, TaskSpec, TrajectoryStatus};
    use crate::prompts::PromptLibrary;

    fn ctx(backend: ScriptedBackend) -> (DetectorContext, Arc<ScriptedBackend>) {
        let b = Arc::new(backend);
        let gw = Gateway::new(b.clone(), "test-model");
        (DetectorContext::new(gw, Arc::new(PromptLibrary::builtin())), b)
    }

    fn alfworld_traj() -> Trajectory {
        let task = TaskSpec::new("af-1", Benchmark::Alfworld, "heat some apple and put it in fridge");
        let mut t = Trajectory::new("af-1", task, TrajectoryStatus::InProgress);
        t.push(Some("I need an apple"), "go to countertop 1", "You see an apple 1.")
            .push(None, "take apple 1 from countertop 1", "You pick up the apple 1.")
            .push(None, "heat apple 1 with microwave 1", "");
        t
    }

    fn inference_reply() -> &'static str {
        "The deduced task is: The agent successfully completed heating the apple.\nThe reason is: it used the microwave."
    }

    fn script(completion: &str, progress: &str) -> ScriptedBackend {
        ScriptedBackend::new()
            .rule("progressing correctly toward", progress)
            .rule("deduced task", inference_reply())
            .rule("", completion)
    }

    #[test]
    fn inference_prompt_withholds_thoughts() {
        let (c, b) = ctx(ScriptedBackend::new().rule("", inference_reply()));
        let mut ev = Vec::new();
        let t = infer_task(&c, &alfworld_traj(), &mut ev).unwrap();
        assert_eq!(t.text, "The agent successfully completed heating the apple.");
        assert!(!b.requests()[0].prompt_text().contains("I need an apple"));
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn inference_failure_alerts() {
        let (c, b) = ctx(ScriptedBackend::new().rule("", "no idea"));
        let rule = &rules_for(Benchmark::Alfworld)[1];
        let v = inferact(&c, &alfworld_traj(), rule, Variant::Verb, 0.5, ProbCombine::DecidingStage).unwrap();
        assert!(v.alert);
        assert_eq!(v.evidence.len(), 2);
        assert_eq!(b.requests().len(), 2);
        assert!(v.notes[0].starts_with("inference failure"));
    }

    #[test]
    fn anywhere_rule_short_circuits_on_true() {
        let (c, b) = ctx(script("A. True", "B. False"));
        let rule = &rules_for(Benchmark::Alfworld)[1];
        let v = inferact(&c, &alfworld_traj(), rule, Variant::Verb, 0.5, ProbCombine::DecidingStage).unwrap();
        assert!(!v.alert);
        assert_eq!(b.requests().len(), 2);
        assert!(v.evidence.iter().all(|e| e.role != "progress"));
        assert_eq!(v.inferred_task.as_deref(), Some("The agent successfully completed heating the apple."));
    }

    #[test]
    fn anywhere_rule_progress_decides() {
        let (c, b) = ctx(script("B. False", "A. True"));
        let rule = &rules_for(Benchmark::Alfworld)[1];
        let v = inferact(&c, &alfworld_traj(), rule, Variant::Verb, 0.5, ProbCombine::DecidingStage).unwrap();
        assert!(!v.alert);
        assert_eq!(b.requests().len(), 3);
        let roles: Vec<&str> = v.evidence.iter().map(|e| e.role.as_str()).collect();
        assert_eq!(roles, ["inference", "completion", "progress"]);
        let progress_req = &b.requests()[2];
        assert_eq!(progress_req.messages.len(), 3);
        assert_eq!(progress_req.messages[1].content, "B. False");

        let (c, _) = ctx(script("B. False", "B. False"));
        let v = inferact(&c, &alfworld_traj(), rule, Variant::Verb, 0.5, ProbCombine::DecidingStage).unwrap();
        assert!(v.alert);
    }

    #[test]
    fn terminal_rule_never_asks_progress() {
        let task = TaskSpec::new("hp-1", Benchmark::Hotpotqa, "Which city is larger?");
        let mut t = Trajectory::new("hp-1", task, TrajectoryStatus::InProgress);
        t.push(None, "search[Paris]", "Paris is the capital of France.").push(None, "finish[Paris]", "");
        let b = ScriptedBackend::new()
            .rule("question interpreted by the agent", "The question interpreted by the agent is: Which city is larger?")
            .rule("", "B. False");
        let (c, b) = ctx(b);
        let rule = &rules_for(Benchmark::Hotpotqa)[0];
        let v = inferact(&c, &t, rule, Variant::Verb, 0.5, ProbCombine::DecidingStage).unwrap();
        assert!(v.alert);
        assert_eq!(b.requests().len(), 2);
    }

    fn lp(letter: &str, p: f64) -> Vec<TokenLogprob> {
        let other = if letter == "A" { "B" } else { "A" };
        vec![TokenLogprob::with_alternatives(&[(letter, p.ln()), (other, (1.0 - p).ln())])]
    }

    #[test]
    fn prob_variant_scores() {
        let rule = &rules_for(Benchmark::Alfworld)[1];
        let backend = || {
            ScriptedBackend::new()
                .rule_logprobs("progressing correctly toward", "A. True", lp("A", 0.8))
                .rule("deduced task", inference_reply())
                .rule_logprobs("", "B. False", lp("B", 0.7))
        };
        let (c, _) = ctx(backend());
        let v = inferact(&c, &alfworld_traj(), rule, Variant::Prob, 0.6, ProbCombine::DecidingStage).unwrap();
        assert!((v.score.unwrap() - 0.2).abs() < 1e-9);
        assert!(!v.alert);

        let (c, _) = ctx(backend());
        let v = inferact(&c, &alfworld_traj(), rule, Variant::Prob, 0.6, ProbCombine::MinOfStages).unwrap();
        assert!((v.score.unwrap() - 0.7).abs() < 1e-9);
        assert!(v.alert);
    }

    #[test]
    fn verify_completion_pass_through() {
        let (c, _) = ctx(ScriptedBackend::new().rule_logprobs("", "A. True", lp("A", 0.3)));
        let t = InferredTask {
            text: "heat an apple".into(),
            rationale: String::new(),
        };
        let mut ev = Vec::new();
        let a = verify_completion(&c, &alfworld_traj(), &t, Variant::Prob, &mut ev).unwrap();
        assert!((a.p_true - 0.3).abs() < 1e-9);
        assert!(!a.holds());
    }

    #[test]
    fn unparsed_completion_is_false() {
        let (c, b) = ctx(ScriptedBackend::new().rule("deduced task", inference_reply()).rule("", "hmm"));
        let rule = &rules_for(Benchmark::Alfworld)[1];
        let v = inferact(&c, &alfworld_traj(), rule, Variant::Verb, 0.5, ProbCombine::DecidingStage).unwrap();
        assert!(v.alert);
        // inference, completion + retry, progress + retry
        assert_eq!(b.requests().len(), 5);
        assert_eq!(v.evidence.len(), 5);
    }
}
