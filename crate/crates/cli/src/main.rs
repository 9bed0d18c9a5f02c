use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use actgate_core::config::{detector_kind, BackendSpec, LoopConfig, RunConfig};
use actgate_core::detectors::{Aggregation, DetectorConfig, ProbCombine, Variant};
use actgate_core::pipeline::{render_loop_table, run_calibration, run_eval, run_loop_config};
use actgate_core::{ConfigError, RunError};
use actgate_service::{AppState, ServiceConfig, ServiceError};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_REPLAY_MISS: u8 = 3;

#[derive(Parser)]
#[command(name = "actgate", version, about = "Preemptive misalignment gate for LLM agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate detectors on a labeled trajectory corpus.
    Eval(EvalArgs),
    /// Fit a detector threshold on a seeded dev split.
    Calibrate(CalibrateArgs),
    /// Simulate the Actor/oracle feedback loop from a config file.
    Loop(LoopArgs),
    /// Run the HTTP service until interrupted.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trajectory corpus (JSONL).
    #[arg(long, required_unless_present = "config")]
    corpus: Option<PathBuf>,
    /// Detector names, comma separated or repeated.
    #[arg(long = "detector", value_delimiter = ',', required_unless_present = "config")]
    detectors: Vec<String>,
    /// InferAct variant when `--detector inferact` is used.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// live, replay:PATH, scripted:PATH or record:PATH.
    #[arg(long)]
    backend: Option<BackendSpec>,
    #[arg(long)]
    model: Option<String>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Multi-step aggregation: min, max, mean or product.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Self-consistency sample count.
    #[arg(long)]
    samples: Option<u32>,
    /// InferAct-prob scoring when both stages ran.
    #[arg(long, value_parser = parse_combine)]
    prob_combine: Option<ProbCombine>,
    /// Worker threads for detection.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    ece_bins: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dev_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Fixed threshold for scored detectors.
    #[arg(long, conflicts_with = "tune")]
    threshold: Option<f64>,
    /// Fit thresholds on a dev split and report the rest.
    #[arg(long)]
    tune: bool,
    /// Where to write the metrics report (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Write the fit (JSON) here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LoopArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's event log path.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Write iteration reports and invariant results (JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long)]
    config: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected verb or prob, got `{s}`"))
}

fn parse_combine(s: &str) -> Result<ProbCombine, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected deciding_stage or min_of_stages, got `{s}`"))
}

fn run_config(args: &RunArgs, threshold: Option<f64>, tune: bool) -> Result<RunConfig, RunError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let corpus = args.corpus.clone().expect("clap enforces --corpus");
            let first = DetectorConfig::new(detector_kind(&args.detectors[0], args.variant)?);
            RunConfig::new(corpus, first, args.backend.clone().unwrap_or(BackendSpec::Live))
        }
    };
    if args.config.is_some() {
        if let Some(c) = &args.corpus {
            cfg.corpus = c.clone();
        }
        if let Some(b) = &args.backend {
            cfg.backend = b.clone();
        }
    }
    if !args.detectors.is_empty() {
        cfg.detectors = args
            .detectors
            .iter()
            .map(|name| detector_kind(name, args.variant).map(DetectorConfig::new))
            .collect::<Result<_, _>>()?;
    }
    for d in &mut cfg.detectors {
        if let Some(t) = threshold {
            d.threshold = Some(t);
        }
        if let Some(a) = args.aggregation {
            d.aggregation = a;
        }
        if let Some(m) = args.samples {
            d.samples = m;
        }
        if let Some(c) = args.prob_combine {
            d.prob_combine = c;
        }
    }
    cfg.tune |= tune;
    if args.model.is_some() {
        cfg.model = args.model.clone();
    }
    if args.prompts.is_some() {
        cfg.prompts = args.prompts.clone();
    }
    cfg.jobs = args.jobs.unwrap_or(cfg.jobs);
    cfg.ece_bins = args.ece_bins.unwrap_or(cfg.ece_bins);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.dev_size = args.dev_size.unwrap_or(cfg.dev_size);
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = run_config(&args.run, args.threshold, args.tune)?;
    let report = run_eval(&cfg)?;
    if let Some(out) = &args.out {
        write(out, &report.to_json())?;
    }
    print!("{}", report.table());
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let cfg = run_config(&args.run, None, true)?;
    if cfg.detectors.len() != 1 {
        return Err(RunError::from(ConfigError::invalid("detectors", "calibrate takes exactly one detector")).into());
    }
    let fit = run_calibration(&cfg)?;
    let text = serde_json::to_string_pretty(&fit)? + "\n";
    if let Some(out) = &args.out {
        write(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn simulate(args: LoopArgs) -> Result<()> {
    let mut cfg = LoopConfig::load(&args.config).map_err(RunError::from)?;
    if args.event_log.is_some() {
        cfg.event_log = args.event_log;
    }
    let run = run_loop_config(&cfg)?;
    if let Some(out) = &args.out {
        let body = json!({"reports": run.reports, "violations": run.violations});
        write(out, &(serde_json::to_string_pretty(&body)? + "\n"))?;
    }
    print!("{}", render_loop_table(&run.reports));
    if let Some(path) = &cfg.event_log {
        eprintln!("event log: {}", path.display());
    }
    if !run.violations.is_empty() {
        for v in &run.violations {
            eprintln!("invariant {} violated at event {}: {}", v.rule, v.index, v.message);
        }
        bail!("{} invariant violation(s)", run.violations.len());
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig::load(&args.config).map_err(ServiceError::from)?;
    let state = AppState::from_config(&cfg)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        eprintln!("listening on {}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        actgate_service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<RunError>() {
        if e.is_replay_miss() {
            EXIT_REPLAY_MISS
        } else if e.is_config() {
            EXIT_CONFIG
        } else {
            EXIT_FAILURE
        }
    } else if let Some(e) = err.downcast_ref::<ServiceError>() {
        match e {
            ServiceError::Io(_) => EXIT_FAILURE,
            _ => EXIT_CONFIG,
        }
    } else {
        EXIT_FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => eval(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Loop(a) => simulate(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
