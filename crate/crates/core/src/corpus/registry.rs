//! Per-benchmark critical-action registries and reference statistics.

use crate::model::{Benchmark, CriticalActionRule, MatchMode, Placement};

/// Built-in critical actions. `custom` has no built-in rules and must be
/// configured by the caller.
pub fn rules_for(benchmark: Benchmark) -> Vec<CriticalActionRule> {
    use MatchMode::*;
    use Placement::*;
    let spec: &[(&str, MatchMode, Placement)] = match benchmark {
        Benchmark::Webshop => &[("click[buy now]", Exact, Terminal)],
        Benchmark::Hotpotqa => &[("finish[", Prefix, Terminal)],
        // put is the action that completes every ALFWorld task family, but
        // two-object tasks also issue it mid-run.
        Benchmark::Alfworld => &[
            ("clean ", Prefix, Anywhere),
            ("heat ", Prefix, Anywhere),
            ("cool ", Prefix, Anywhere),
            ("put ", Prefix, Anywhere),
        ],
        Benchmark::Custom => &[],
    };
    spec.iter()
        .map(|(pattern, mode, placement)| CriticalActionRule::new(benchmark, pattern, *mode, *placement))
        .collect()
}

pub fn all_rules() -> Vec<CriticalActionRule> {
    Benchmark::ALL.iter().flat_map(|b| rules_for(*b)).collect()
}

/// (successful, failed, halted) first-trial counts of the original study.
pub fn reference_counts(benchmark: Benchmark) -> Option<(usize, usize, usize)> {
    match benchmark {
        Benchmark::Webshop => Some((90, 182, 28)),
        Benchmark::Hotpotqa => Some((172, 68, 60)),
        Benchmark::Alfworld => Some((87, 18, 29)),
        Benchmark::Custom => None,
    }
}

/// Oracle inspections available per iteration. Falls back to half the
/// corpus, rounded up.
pub fn default_quota(benchmark: Benchmark, corpus_size: usize) -> usize {
    match benchmark {
        Benchmark::Webshop => 136,
        Benchmark::Hotpotqa => 120,
        Benchmark::Alfworld => 53,
        Benchmark::Custom => corpus_size.div_ceil(2),
    }
}
