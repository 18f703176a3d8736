//! Static traces, dynamic execution logs, trace ranking and coverage.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

pub mod adapter;
mod coverage;
mod dynamic;
mod rank;
mod static_trace;

pub use adapter::{AdapterError, LogAdapter};
pub use coverage::{coverage_summary, executed_steps, match_location, sink_hit, CoverageSummary};
pub use dynamic::{
    parse_dynamic_log, parse_dynamic_log_strict, DynamicTrace, ExecutionEvent, EVENT_PREFIX,
};
pub use rank::{location_tokens, rank_traces, similarity, DEFAULT_TOP_K};
pub use static_trace::{
    format_static_traces, parse_static_traces, parse_static_traces_str, StaticTrace, StepKind,
    TraceStep,
};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trace at line {line}: {message}")]
    MalformedTrace { line: usize, message: String },
    #[error("trace file contains no traces")]
    EmptyFile,
    #[error("trace `{trace_id}`: {reason}")]
    InvariantViolation { trace_id: String, reason: String },
    #[error("malformed event at line {line}: {message}")]
    MalformedEvent { line: usize, message: String },
}

/// Renders a trace for inclusion in a prompt: a header and one line per step
/// with its index, kind, location and snippet. The sink line is labeled SINK.
pub fn format_trace_for_prompt(trace: &StaticTrace) -> String {
    let mut out = format!(
        "Trace {} ({} steps, source first, sink last):\n",
        trace.trace_id,
        trace.steps.len()
    );
    for line in trace_step_lines(trace) {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// The per-step lines used by [`format_trace_for_prompt`].
pub fn trace_step_lines(trace: &StaticTrace) -> Vec<String> {
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(idx, step)| {
            let label = match step.kind {
                StepKind::Source => "SOURCE",
                StepKind::Intermediate => "STEP",
                StepKind::Sink => "SINK",
            };
            let mut line = format!(
                "  [{idx}] {label} {} in {}",
                step.location.file_line(),
                step.location.qualified_method()
            );
            if let Some(snippet) = &step.snippet {
                let _ = write!(line, " :: {}", snippet.trim());
            }
            line
        })
        .collect()
}
