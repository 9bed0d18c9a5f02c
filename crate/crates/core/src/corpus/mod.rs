//! Trajectory corpora: JSONL ingestion, validation, label resolution and
//! dev/test splits.

pub mod registry;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CorpusError, ModelError};
use crate::model::{Benchmark, GoldKind, GoldLabel, GoldPayload, Trajectory, TrajectoryStatus};

pub const DEFAULT_DEV_SIZE: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub successful: usize,
    pub failed: usize,
    pub halted: usize,
    /// Non-halted records without a gold label.
    pub unlabeled: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub benchmark: Benchmark,
    pub counts: OutcomeCounts,
    pub split: Option<Split>,
    /// First-trial counts reported for the original benchmark runs.
    pub reference_counts: Option<OutcomeCounts>,
}

impl CorpusManifest {
    pub fn compute(benchmark: Benchmark, trajectories: &[Trajectory]) -> Self {
        let mut counts = OutcomeCounts::default();
        for t in trajectories {
            if t.is_halted() {
                counts.halted += 1;
                continue;
            }
            match t.task.gold.as_ref().map(|g| resolve_label(t, g)) {
                Some(Ok(false)) => counts.successful += 1,
                Some(Ok(true)) => counts.failed += 1,
                Some(Err(_)) | None => counts.unlabeled += 1,
            }
        }
        let reference_counts = registry::reference_counts(benchmark).map(|(s, f, h)| OutcomeCounts {
            successful: s,
            failed: f,
            halted: h,
            unlabeled: 0,
        });
        Self {
            benchmark,
            counts,
            split: None,
            reference_counts,
        }
    }
}

/// Loads and validates a JSONL corpus. Blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<(Vec<Trajectory>, CorpusManifest), CorpusError> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn parse_corpus(text: &str, origin: &str) -> Result<(Vec<Trajectory>, CorpusManifest), CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut benchmark = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let traj = parse_record(line).map_err(|(field, message)| CorpusError::Parse {
            path: origin.to_string(),
            line: lineno,
            field,
            message,
        })?;
        let schema = |source: ModelError| CorpusError::Schema {
            path: origin.to_string(),
            line: lineno,
            source,
        };
        traj.validate().map_err(schema)?;
        match benchmark {
            None => benchmark = Some(traj.task.benchmark),
            Some(b) if b != traj.task.benchmark => {
                return Err(schema(ModelError::invalid(
                    "benchmark",
                    format!("corpus mixes {b} and {}", traj.task.benchmark),
                )))
            }
            _ => {}
        }
        if !seen.insert(traj.trajectory_id.clone()) {
            return Err(CorpusError::Duplicate {
                path: origin.to_string(),
                line: lineno,
                id: traj.trajectory_id,
            });
        }
        out.push(traj);
    }
    let manifest = CorpusManifest::compute(benchmark.unwrap_or(Benchmark::Custom), &out);
    Ok((out, manifest))
}

/// Deserializes one record, reporting the JSON path of the offending field.
pub fn parse_record(line: &str) -> Result<Trajectory, (String, String)> {
    let mut de = serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        (field, e.into_inner().to_string())
    })
}

pub fn to_jsonl(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(path: &Path, trajectories: &[Trajectory]) -> Result<(), CorpusError> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_jsonl(trajectories).as_bytes())?;
    Ok(())
}

/// Seeded dev/test split over labeled, non-halted trajectories.
pub fn split_dev_test(trajectories: &[Trajectory], dev_size: usize, seed: u64) -> Result<Split, CorpusError> {
    let mut ids: Vec<String> = trajectories
        .iter()
        .filter(|t| !t.is_halted() && t.task.gold.is_some())
        .map(|t| t.trajectory_id.clone())
        .collect();
    if dev_size == 0 || dev_size > ids.len() {
        return Err(CorpusError::Split(format!(
            "dev size {dev_size} does not fit {} labeled trajectories",
            ids.len()
        )));
    }
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(dev_size);
    ids.sort();
    let mut test = test;
    test.sort();
    Ok(Split { dev: ids, test })
}

/// `true` when the trajectory is misaligned with its task.
pub fn resolve_label(traj: &Trajectory, gold: &GoldLabel) -> Result<bool, CorpusError> {
    let err = |message: String| CorpusError::Label {
        trajectory_id: traj.trajectory_id.clone(),
        message,
    };
    if !gold.matches_benchmark(traj.task.benchmark) {
        return Err(err(format!("gold kind {:?} does not fit {}", gold.kind, traj.task.benchmark)));
    }
    if traj.is_halted() {
        return Ok(true);
    }
    match gold.kind {
        GoldKind::AnnotatedTrajectoryVerdict => annotated_verdict(&gold.payload)
            .map(|correct| !correct)
            .ok_or_else(|| err(format!("unreadable annotated verdict {:?}", gold.payload))),
        GoldKind::ExactAnswer => {
            let answer = traj
                .steps
                .iter()
                .rev()
                .find(|s| crate::model::normalize_action(&s.action).starts_with("finish["))
                .map(|s| bracket_argument(&s.action));
            match answer {
                Some(ans) => Ok(normalize_answer(&ans) != normalize_answer(&gold.payload_text())),
                None if traj.status == TrajectoryStatus::Terminal => {
                    Err(err("terminal trajectory has no finish[...] action".into()))
                }
                None => Ok(true),
            }
        }
        GoldKind::GoldItem => match purchased_item(traj) {
            Some((item, options)) => {
                let (gold_item, gold_options) = parse_gold_item(&gold.payload_text());
                Ok(!(item == gold_item && options == gold_options))
            }
            None if traj.status == TrajectoryStatus::Terminal => {
                Err(err("terminal trajectory has no click[Buy Now] action".into()))
            }
            None => Ok(true),
        },
    }
}

fn annotated_verdict(payload: &GoldPayload) -> Option<bool> {
    match payload {
        GoldPayload::Flag(b) => Some(*b),
        GoldPayload::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
            "correct" | "true" | "aligned" | "success" => Some(true),
            "incorrect" | "false" | "misaligned" | "failure" => Some(false),
            _ => None,
        },
    }
}

/// Text between the first `[` and the last `]` of an action.
pub fn bracket_argument(action: &str) -> String {
    let start = action.find('[').map(|i| i + 1).unwrap_or(0);
    let end = action.rfind(']').filter(|&e| e >= start).unwrap_or(action.len());
    action[start..end].to_string()
}

/// Standard exact-match answer normalization: lowercase, drop punctuation
/// and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

const WEBSHOP_CONTROLS: &[&str] = &[
    "buy now",
    "back to search",
    "next >",
    "< prev",
    "description",
    "features",
    "reviews",
    "attributes",
];

fn is_item_id(arg: &str) -> bool {
    arg.len() == 10 && arg.chars().all(|c| c.is_ascii_alphanumeric()) && arg.chars().any(|c| c.is_ascii_digit())
}

/// Item id and option set selected before the purchase click.
fn purchased_item(traj: &Trajectory) -> Option<(String, Vec<String>)> {
    let actions: Vec<String> = traj.steps.iter().map(|s| crate::model::normalize_action(&s.action)).collect();
    let buy = actions.iter().rposition(|a| a == "click[buy now]")?;
    let clicks: Vec<(usize, String)> = actions[..buy]
        .iter()
        .enumerate()
        .filter(|(_, a)| a.starts_with("click["))
        .map(|(i, a)| (i, bracket_argument(a).trim().to_string()))
        .collect();
    let (item_pos, item) = clicks.iter().rev().find(|(_, arg)| is_item_id(arg))?.clone();
    let mut options: Vec<String> = clicks
        .into_iter()
        .filter(|(i, arg)| *i > item_pos && !WEBSHOP_CONTROLS.contains(&arg.as_str()))
        .map(|(_, arg)| arg)
        .collect();
    options.sort();
    options.dedup();
    Some((item, options))
}

fn parse_gold_item(payload: &str) -> (String, Vec<String>) {
    let mut parts = payload.split('|').map(crate::model::normalize_action);
    let item = parts.next().unwrap_or_default();
    let mut options: Vec<String> = parts.filter(|p| !p.is_empty()).collect();
    options.sort();
    options.dedup();
    (item, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskSpec;

    fn hotpot(answer_action: &str, gold: &str) -> (Trajectory, GoldLabel) {
        let gold = GoldLabel::exact_answer(gold);
        let mut t = Trajectory::new(
            "h1",
            TaskSpec::new("q1", Benchmark::Hotpotqa, "What is the capital of France?").with_gold(gold.clone()),
            TrajectoryStatus::Terminal,
        );
        t.push(None, "search[France]", "France is a country...");
        t.push(None, answer_action, "Episode finished");
        (t, gold)
    }

    #[test]
    fn hotpot_answers_normalize() {
        let (t, g) = hotpot("finish[Paris]", "paris.");
        assert!(!resolve_label(&t, &g).unwrap());
        let (t, g) = hotpot("Finish[The  Eiffel tower]", "eiffel tower");
        assert!(!resolve_label(&t, &g).unwrap());
        let (t, g) = hotpot("finish[Lyon]", "Paris");
        assert!(resolve_label(&t, &g).unwrap());
    }

    #[test]
    fn terminal_without_terminal_action_is_an_error() {
        let (mut t, g) = hotpot("finish[Paris]", "Paris");
        t.steps.pop();
        assert!(matches!(resolve_label(&t, &g), Err(CorpusError::Label { .. })));
        t.status = TrajectoryStatus::InProgress;
        assert!(resolve_label(&t, &g).unwrap());
    }

    fn shop(item: &str, option: &str) -> Trajectory {
        let mut t = Trajectory::new(
            "w1",
            TaskSpec::new("w", Benchmark::Webshop, "i need grey shades 66 inches")
                .with_gold(GoldLabel::gold_item("B07XYZ1234", &["grey", "66 inches"])),
            TrajectoryStatus::Terminal,
        );
        t.push(None, "search[grey shades]", "results")
            .push(None, &format!("click[{item}]"), "item page")
            .push(None, "click[66 inches]", "selected")
            .push(None, &format!("click[{option}]"), "selected")
            .push(None, "click[Description]", "desc")
            .push(None, "click[Buy Now]", "Thank you for shopping");
        t
    }

    #[test]
    fn webshop_item_and_options_must_match() {
        let gold = GoldLabel::gold_item("B07XYZ1234", &["grey", "66 inches"]);
        assert!(!resolve_label(&shop("B07XYZ1234", "Grey"), &gold).unwrap());
        assert!(resolve_label(&shop("B07XYZ9999", "grey"), &gold).unwrap());
        assert!(resolve_label(&shop("B07XYZ1234", "black"), &gold).unwrap());
    }

    #[test]
    fn alfworld_reads_annotation() {
        let mut t = Trajectory::new(
            "a1",
            TaskSpec::new("a", Benchmark::Alfworld, "heat some apple and put it in fridge"),
            TrajectoryStatus::Terminal,
        );
        t.push(None, "heat apple 1 with microwave 1", "You heat the apple 1");
        assert!(!resolve_label(&t, &GoldLabel::annotated(true)).unwrap());
        assert!(resolve_label(&t, &GoldLabel::annotated(false)).unwrap());
        let text = GoldLabel {
            kind: GoldKind::AnnotatedTrajectoryVerdict,
            payload: GoldPayload::Text("correct".into()),
        };
        assert!(!resolve_label(&t, &text).unwrap());
    }

    #[test]
    fn halted_is_misaligned() {
        let (mut t, g) = hotpot("finish[Paris]", "Paris");
        t.status = TrajectoryStatus::Halted;
        assert!(resolve_label(&t, &g).unwrap());
    }

    fn record(id: &str, instruction: &str) -> String {
        format!(
            r#"{{"trajectory_id":"{id}","benchmark":"hotpotqa","task":{{"task_id":"q-{id}","instruction":"{instruction}","gold":{{"kind":"exact_answer","payload":"Paris"}}}},"status":"terminal","steps":[{{"index":0,"thought":null,"action":"finish[Paris]","observation":"done"}}]}}"#
        )
    }

    #[test]
    fn loads_valid_corpus_and_counts() {
        let text = [record("a", "q?"), record("b", "q?"), record("c", "q?")].join("\n");
        let (ts, m) = parse_corpus(&text, "mem").unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(m.counts.successful, 3);
        assert_eq!(m.reference_counts.unwrap().successful, 172);
    }

    #[test]
    fn schema_errors_name_line_and_field() {
        let bad = record("b", "q?").replace(r#""instruction":"q?","#, "");
        let text = [record("a", "q?"), bad].join("\n");
        let err = parse_corpus(&text, "mem").unwrap_err();
        match &err {
            CorpusError::Parse { line, field, message, .. } => {
                assert_eq!(*line, 2);
                assert!(field.starts_with("task") || message.contains("instruction"), "{err}");
                assert!(message.contains("instruction"), "{err}");
            }
            other => panic!("unexpected {other}"),
        }
        let empty = record("b", "  ");
        let err = parse_corpus(&empty, "mem").unwrap_err();
        assert!(err.to_string().contains("mem:1") && err.to_string().contains("task.instruction"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = [record("a", "q?"), record("a", "q?")].join("\n");
        assert!(matches!(parse_corpus(&text, "mem"), Err(CorpusError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn round_trip_is_a_fixpoint() {
        let text = [record("a", "q?"), record("b", "why?")].join("\n");
        let (ts, _) = parse_corpus(&text, "mem").unwrap();
        let again = parse_corpus(&to_jsonl(&ts), "mem").unwrap().0;
        assert_eq!(ts, again);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let text: Vec<String> = (0..20).map(|i| record(&format!("t{i:02}"), "q?")).collect();
        let (ts, _) = parse_corpus(&text.join("\n"), "mem").unwrap();
        let a = split_dev_test(&ts, 5, 7).unwrap();
        let b = split_dev_test(&ts, 5, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dev.len(), 5);
        assert_eq!(a.test.len(), 15);
        assert!(a.dev.iter().all(|d| !a.test.contains(d)));
        assert_ne!(split_dev_test(&ts, 5, 8).unwrap(), a);
        assert!(split_dev_test(&ts, 21, 7).is_err());
    }
}
