//! End-to-end runs assembled from configuration: offline evaluation,
//! threshold calibration and loop simulation.

use std::sync::Arc;

use serde::Serialize;

use crate::config::{resolve_model, ClockMode, LoopConfig, OracleMode, QuotaName, QuotaSetting, RunConfig};
use crate::corpus::registry::{default_quota, rules_for};
use crate::corpus::{load_corpus, Split};
use crate::detectors::{build_detector, Detector, DetectorConfig, DetectorContext, DetectorKind, FnDetector, OracleDetector};
use crate::error::{ConfigError, RunError};
use crate::eval::{calibrate, evaluate, prepare, EvalOptions, Prepared, ScoreScale, TuneOptions};
use crate::gateway::{Backend, Gateway, ScriptedBackend};
use crate::metrics::ThresholdFit;
use crate::model::{Benchmark, CriticalActionRule, DetectorVerdict, Trajectory};
use crate::orchestrator::{
    check_invariants, run_loop, AlertStore, Clock, Event, EventLog, IterationReport, LogicalClock, LoopSettings,
    ScriptedActor, SimulatedOracle, SystemClock, Violation,
};
use crate::prompts::PromptLibrary;
use crate::report::MetricsReport;

/// Detector name used for full-validation runs.
pub const FULL_VALIDATION: &str = "full-validation";

fn prompts(dir: Option<&std::path::Path>) -> Result<Arc<PromptLibrary>, RunError> {
    Ok(Arc::new(match dir {
        Some(d) => PromptLibrary::with_overrides(d)?,
        None => PromptLibrary::builtin(),
    }))
}

fn report_name(cfg: &DetectorConfig) -> String {
    match cfg.kind {
        DetectorKind::MultiStep if cfg.aggregation != Default::default() => {
            format!("{}({})", cfg.kind, cfg.aggregation.as_str())
        }
        _ => cfg.kind.to_string(),
    }
}

struct EvalInputs {
    benchmark: Benchmark,
    prepared: Prepared,
    ctx: DetectorContext,
}

fn eval_inputs(cfg: &RunConfig) -> Result<EvalInputs, RunError> {
    cfg.validate()?;
    let (trajectories, manifest) = load_corpus(&cfg.corpus)?;
    let rules = match &cfg.rules {
        Some(r) => r.clone(),
        None => rules_for(manifest.benchmark),
    };
    if rules.is_empty() {
        return Err(ConfigError::invalid("rules", format!("benchmark `{}` has no built-in critical actions", manifest.benchmark)).into());
    }
    let backend: Arc<dyn Backend> = if cfg.detectors.iter().all(|d| d.kind == DetectorKind::Oracle) {
        Arc::new(ScriptedBackend::new())
    } else {
        cfg.backend.build().map_err(RunError::Backend)?
    };
    let ctx = DetectorContext::new(
        Gateway::new(backend, resolve_model(cfg.model.as_deref())),
        prompts(cfg.prompts.as_deref())?,
    );
    Ok(EvalInputs {
        benchmark: manifest.benchmark,
        prepared: prepare(&trajectories, &rules)?,
        ctx,
    })
}

/// Evaluates every configured detector on the corpus.
pub fn run_eval(cfg: &RunConfig) -> Result<MetricsReport, RunError> {
    let inputs = eval_inputs(cfg)?;
    let opts = EvalOptions {
        tune: cfg.tune.then_some(TuneOptions {
            dev_size: cfg.dev_size,
            seed: cfg.seed,
        }),
        jobs: cfg.jobs,
        ece_bins: cfg.ece_bins,
    };
    let mut detectors = Vec::new();
    for d in &cfg.detectors {
        let detector = build_detector(d, inputs.benchmark, inputs.ctx.clone())?;
        let scale = ScoreScale::for_kind(d.kind);
        detectors.push(evaluate(&report_name(d), detector.as_ref(), scale, &inputs.prepared.cases, &opts)?);
    }
    Ok(MetricsReport {
        benchmark: inputs.benchmark,
        evaluated: inputs.prepared.cases.len(),
        skipped: inputs.prepared.skipped,
        detectors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub detector: String,
    pub fit: ThresholdFit,
    pub split: Split,
}

/// Fits the first configured detector's threshold on a seeded dev split.
pub fn run_calibration(cfg: &RunConfig) -> Result<Calibration, RunError> {
    let mut cfg = cfg.clone();
    cfg.tune = true;
    let inputs = eval_inputs(&cfg)?;
    let d = &cfg.detectors[0];
    let detector = build_detector(d, inputs.benchmark, inputs.ctx.clone())?;
    let tune = TuneOptions {
        dev_size: cfg.dev_size,
        seed: cfg.seed,
    };
    let (fit, split) = calibrate(detector.as_ref(), &inputs.prepared.cases, tune, cfg.jobs)?;
    Ok(Calibration {
        detector: report_name(d),
        fit,
        split,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopRun {
    pub reports: Vec<IterationReport>,
    pub events: Vec<Event>,
    pub violations: Vec<Violation>,
}

fn always_alert() -> FnDetector {
    FnDetector::new(FULL_VALIDATION, |_: &Trajectory, _: &CriticalActionRule| {
        Ok(DetectorVerdict::binary(FULL_VALIDATION, true, Vec::new()))
    })
}

/// Runs a loop simulation over scripted Actor trials.
pub fn run_loop_config(cfg: &LoopConfig) -> Result<LoopRun, RunError> {
    cfg.validate()?;
    let mut actor = ScriptedActor::from_jsonl(&cfg.tasks)?;
    let tasks = actor.tasks();
    if tasks.is_empty() {
        return Err(ConfigError::invalid("tasks", "no actor scripts found").into());
    }
    let mut benchmarks: Vec<Benchmark> = tasks.iter().map(|t| t.benchmark).collect();
    benchmarks.sort_by_key(|b| b.as_str());
    benchmarks.dedup();
    let rules = match &cfg.rules {
        Some(r) => r.clone(),
        None => benchmarks.iter().flat_map(|b| rules_for(*b)).collect(),
    };
    if rules.is_empty() {
        return Err(ConfigError::invalid("rules", "no critical actions configured").into());
    }

    let ctx = match (&cfg.backend, cfg.needs_backend()?) {
        (Some(spec), true) => Some(DetectorContext::new(
            Gateway::new(spec.build().map_err(RunError::Backend)?, resolve_model(cfg.model.as_deref())),
            prompts(cfg.prompts.as_deref())?,
        )),
        _ => None,
    };
    if cfg.llm_reflection {
        if let Some(ctx) = &ctx {
            actor = actor.with_reflector(ctx.clone());
        }
    }

    let detector_cfg = cfg.detector_config()?;
    let detector: Box<dyn Detector> = match (cfg.oracle, detector_cfg.kind, &ctx) {
        (OracleMode::FullValidation, _, _) => Box::new(always_alert()),
        (_, DetectorKind::Oracle, _) => Box::new(OracleDetector),
        (_, _, Some(ctx)) => {
            if benchmarks.len() != 1 {
                return Err(ConfigError::invalid("tasks", "LLM detectors need tasks from a single benchmark").into());
            }
            build_detector(&detector_cfg, benchmarks[0], ctx.clone())?
        }
        (_, _, None) => return Err(ConfigError::invalid("backend", "the detector needs a backend").into()),
    };
    let oracle = match (&ctx, cfg.feedback_kind) {
        (Some(ctx), crate::orchestrator::FeedbackKind::NaturalLanguage) => SimulatedOracle::with_language_model(ctx.clone()),
        _ => SimulatedOracle::new(),
    };

    let quota = match (cfg.oracle, cfg.quota) {
        (OracleMode::FullValidation, _) | (_, Some(QuotaSetting::Named(QuotaName::Unlimited))) => None,
        (_, Some(QuotaSetting::Count(n))) => Some(n),
        (_, None) => Some(match benchmarks.as_slice() {
            [b] => default_quota(*b, tasks.len()),
            _ => tasks.len().div_ceil(2),
        }),
    };
    let log = Arc::new(match &cfg.event_log {
        Some(p) => EventLog::with_file(p)?,
        None => EventLog::new(),
    });
    let clock: Arc<dyn Clock> = match cfg.clock {
        ClockMode::System => Arc::new(SystemClock),
        ClockMode::Logical => Arc::new(LogicalClock::default()),
    };
    let store = AlertStore::with_parts(0, log.clone(), clock, cfg.proceed_on_expiry);
    let settings = LoopSettings {
        n_iterations: cfg.n_iterations,
        quota,
        feedback_kind: cfg.feedback_kind,
        retry_expired: cfg.retry_expired,
        full_validation: cfg.oracle == OracleMode::FullValidation,
    };
    let result = run_loop(&tasks, &actor, detector.as_ref(), &rules, &oracle, &settings, &store);
    log.flush()?;
    let reports = result?;
    let events = log.snapshot();
    let violations = check_invariants(&events);
    Ok(LoopRun {
        reports,
        events,
        violations,
    })
}

/// Aligned per-iteration summary table.
pub fn render_loop_table(reports: &[IterationReport]) -> String {
    let mut out = String::from("Iter  Success  Rate    Alerts  Aligned  Misaligned  Expired  Quota    Delivered\n");
    for r in reports {
        let quota = match r.quota_capacity {
            Some(c) => format!("{}/{}", r.quota_consumed, c),
            None => format!("{}/-", r.quota_consumed),
        };
        out.push_str(&format!(
            "{:<4}  {:>7}  {:<6.4}  {:>6}  {:>7}  {:>10}  {:>7}  {:<7}  {:>9}\n",
            r.iteration,
            format!("{}/{}", r.successes, r.total),
            r.success_rate,
            r.alerts_raised,
            r.resolved_aligned,
            r.resolved_misaligned,
            r.expired,
            quota,
            r.feedback_delivered,
        ));
        if let Some(reason) = &r.aborted {
            out.push_str(&format!("      aborted: {reason}\n"));
        }
    }
    out
}
