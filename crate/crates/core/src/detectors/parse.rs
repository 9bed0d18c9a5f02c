//! Parsers for detector LLM replies. Each returns `None` when the reply
//! does not follow the requested format.

use std::sync::LazyLock;

use regex::Regex;

use crate::model::Benchmark;

static ANSWER_IS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)the answer is\s*:?\s*[*<\[]*\s*(correct|incorrect)\b").expect("regex"));
static CORRECTNESS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)correctness\s*:\s*[*<\[]*\s*(correct|incorrect)\b").expect("regex"));
static STEP_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\W*step\s*(\d+)\s*:\s*([0-9]*\.?[0-9]+)").expect("regex"));
static REASON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)the reason is\s*:\s*(.+)").expect("regex"));

/// Direct-prompt label: `Some(true)` when the trajectory is judged
/// Incorrect. ALFWorld replies use a `Correctness:` line.
pub fn direct_label(benchmark: Benchmark, text: &str) -> Option<bool> {
    let primary: &Regex = if benchmark == Benchmark::Alfworld { &CORRECTNESS } else { &ANSWER_IS };
    let secondary: &Regex = if benchmark == Benchmark::Alfworld { &ANSWER_IS } else { &CORRECTNESS };
    primary
        .captures(text)
        .or_else(|| secondary.captures(text))
        .map(|c| c[1].eq_ignore_ascii_case("incorrect"))
}

/// Per-step probabilities for steps `1..=n`; entries the reply omits (or
/// gives outside [0,1]) are `None`.
pub fn step_probabilities(text: &str, n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; n];
    for c in STEP_LINE.captures_iter(text) {
        let (Ok(step), Ok(p)) = (c[1].parse::<usize>(), c[2].parse::<f64>()) else {
            continue;
        };
        if (1..=n).contains(&step) && (0.0..=1.0).contains(&p) && out[step - 1].is_none() {
            out[step - 1] = Some(p);
        }
    }
    out
}

fn inference_cue(benchmark: Benchmark) -> &'static [&'static str] {
    match benchmark {
        Benchmark::Webshop => &["the instruction interpreted by the agent is"],
        Benchmark::Hotpotqa => &["the question interpreted by the agent is"],
        Benchmark::Alfworld => &["the deduced task is"],
        Benchmark::Custom => &[
            "the instruction interpreted by the agent is",
            "the question interpreted by the agent is",
            "the deduced task is",
        ],
    }
}

/// Inferred task line and the free-text reason, if present.
pub fn inferred_task(benchmark: Benchmark, text: &str) -> Option<(String, String)> {
    let lower = text.to_lowercase();
    let (start, cue) = inference_cue(benchmark)
        .iter()
        .filter_map(|cue| lower.find(cue).map(|i| (i, cue.len())))
        .min_by_key(|(i, _)| *i)?;
    // lowercasing can shift byte offsets for non-ASCII text
    if lower.len() != text.len() {
        return inferred_task_slow(benchmark, text);
    }
    let rest = &text[start + cue..];
    let rest = rest.trim_start_matches(|c: char| c == ':' || c.is_whitespace());
    let line = rest.lines().next().unwrap_or("").trim();
    let task = line.trim_start_matches(['<', '*']).trim_end_matches(['>', '*']).trim();
    if task.is_empty() {
        return None;
    }
    let reason = REASON.captures(text).map(|c| c[1].trim().to_string()).unwrap_or_default();
    Some((task.to_string(), reason))
}

fn inferred_task_slow(benchmark: Benchmark, text: &str) -> Option<(String, String)> {
    for cue in inference_cue(benchmark) {
        let re = Regex::new(&format!(r"(?i){}\s*:?\s*(.*)", regex::escape(cue))).expect("regex");
        if let Some(c) = re.captures(text) {
            let task = c[1].trim().to_string();
            if task.is_empty() {
                return None;
            }
            let reason = REASON.captures(text).map(|c| c[1].trim().to_string()).unwrap_or_default();
            return Some((task, reason));
        }
    }
    None
}
