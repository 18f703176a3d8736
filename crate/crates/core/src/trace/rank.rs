//! Deterministic similarity ranking of candidate traces against location hints.

use std::collections::BTreeSet;

use super::StaticTrace;
use crate::location::CodeLocation;

/// Number of traces kept for multi-trace runs unless configured otherwise.
pub const DEFAULT_TOP_K: usize = 5;

/// Lowercased tokens of a location: the file stem, each segment of the class
/// name (split on `.` and `$`), and the method name.
pub fn location_tokens(loc: &CodeLocation) -> BTreeSet<String> {
    let mut tokens = BTreeSet::new();
    let file_name = loc.file.rsplit(['/', '\\']).next().unwrap_or("");
    let stem = match file_name.rfind('.') {
        Some(idx) if idx > 0 => &file_name[..idx],
        _ => file_name,
    };
    let class_segments = loc.class_fqn.split(['.', '$']);
    for token in std::iter::once(stem)
        .chain(class_segments)
        .chain(std::iter::once(loc.method.as_str()))
    {
        if !token.is_empty() {
            tokens.insert(token.to_lowercase());
        }
    }
    tokens
}

/// Best token overlap between any hint and any step of the trace.
pub fn similarity(trace: &StaticTrace, hints: &[CodeLocation]) -> usize {
    let hint_tokens: Vec<_> = hints.iter().map(location_tokens).collect();
    trace
        .steps
        .iter()
        .map(|step| location_tokens(&step.location))
        .flat_map(|step_tokens| {
            hint_tokens
                .iter()
                .map(move |h| h.intersection(&step_tokens).count())
        })
        .max()
        .unwrap_or(0)
}

/// Returns the `k` most similar traces, best first. Equal scores keep file
/// order; with no hints this is the first `k` traces as given.
pub fn rank_traces(traces: &[StaticTrace], hints: &[CodeLocation], k: usize) -> Vec<StaticTrace> {
    let mut scored: Vec<(usize, &StaticTrace)> = traces
        .iter()
        .map(|t| (if hints.is_empty() { 0 } else { similarity(t, hints) }, t))
        .collect();
    // stable sort keeps original order among ties
    scored.sort_by_key(|s| std::cmp::Reverse(s.0));
    scored
        .into_iter()
        .take(k)
        .map(|(_, t)| t.clone())
        .collect()
}
