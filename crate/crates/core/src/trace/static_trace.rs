//! Static source-to-sink traces and their canonical text format.
//!
//! ```text
//! # comment
//! TRACE <trace_id>
//! STEP source <class_fqn>.<method> <file>[:<line>] [| <snippet>]
//! STEP intermediate ...
//! STEP sink ...
//! END
//! ```
//!
//! Keywords are case-sensitive. File paths may not contain whitespace. The
//! snippet is everything after the first ` | ` separator, trimmed.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TraceError;
use crate::location::{is_safe_id, split_file_line, split_qualified, CodeLocation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Source,
    Intermediate,
    Sink,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Source => "source",
            StepKind::Intermediate => "intermediate",
            StepKind::Sink => "sink",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(StepKind::Source),
            "intermediate" => Some(StepKind::Intermediate),
            "sink" => Some(StepKind::Sink),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub location: CodeLocation,
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snippet: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticTrace {
    pub trace_id: String,
    pub steps: Vec<TraceStep>,
}

impl StaticTrace {
    /// Checks the shape rules: at least two steps, a single source first, a
    /// single sink last, intermediates in between.
    pub fn validate(&self) -> Result<(), TraceError> {
        let violation = |reason: String| TraceError::InvariantViolation {
            trace_id: self.trace_id.clone(),
            reason,
        };
        if !is_safe_id(&self.trace_id) {
            return Err(violation(format!(
                "trace id `{}` must be non-empty and use only [A-Za-z0-9._-]",
                self.trace_id
            )));
        }
        if self.steps.len() < 2 {
            return Err(violation(format!(
                "a trace needs at least 2 steps, found {}",
                self.steps.len()
            )));
        }
        let last = self.steps.len() - 1;
        for (idx, step) in self.steps.iter().enumerate() {
            let expected = match idx {
                0 => StepKind::Source,
                i if i == last => StepKind::Sink,
                _ => StepKind::Intermediate,
            };
            if step.kind != expected {
                return Err(violation(format!(
                    "step {idx} has kind {} but must be {}",
                    step.kind.as_str(),
                    expected.as_str()
                )));
            }
            step.location
                .check()
                .map_err(|e| violation(format!("step {idx}: {e}")))?;
        }
        Ok(())
    }

    pub fn source(&self) -> &TraceStep {
        &self.steps[0]
    }

    pub fn sink(&self) -> &TraceStep {
        &self.steps[self.steps.len() - 1]
    }
}

/// Reads and parses a trace file.
pub fn parse_static_traces(file: &Path) -> Result<Vec<StaticTrace>, TraceError> {
    let text = std::fs::read_to_string(file).map_err(|source| TraceError::Io {
        path: file.to_path_buf(),
        source,
    })?;
    parse_static_traces_str(&text)
}

pub fn parse_static_traces_str(text: &str) -> Result<Vec<StaticTrace>, TraceError> {
    let mut traces: Vec<StaticTrace> = Vec::new();
    let mut open: Option<(StaticTrace, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| TraceError::MalformedTrace {
            line: line_no,
            message,
        };
        let (keyword, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        match keyword {
            "TRACE" => {
                if let Some((prev, start)) = &open {
                    return Err(malformed(format!(
                        "TRACE `{}` opened on line {start} is missing END",
                        prev.trace_id
                    )));
                }
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(malformed("TRACE takes exactly one trace id".into()));
                }
                open = Some((
                    StaticTrace {
                        trace_id: rest.to_string(),
                        steps: Vec::new(),
                    },
                    line_no,
                ));
            }
            "STEP" => {
                let Some((trace, _)) = open.as_mut() else {
                    return Err(malformed("STEP outside of a TRACE block".into()));
                };
                trace.steps.push(parse_step(rest).map_err(malformed)?);
            }
            "END" => {
                if !rest.is_empty() {
                    return Err(malformed("END takes no arguments".into()));
                }
                let Some((trace, _)) = open.take() else {
                    return Err(malformed("END without a matching TRACE".into()));
                };
                trace.validate()?;
                if traces.iter().any(|t| t.trace_id == trace.trace_id) {
                    return Err(TraceError::InvariantViolation {
                        trace_id: trace.trace_id,
                        reason: "duplicate trace id".into(),
                    });
                }
                traces.push(trace);
            }
            other => {
                return Err(malformed(format!("unknown record `{other}`")));
            }
        }
    }

    if let Some((trace, start)) = open {
        return Err(TraceError::MalformedTrace {
            line: start,
            message: format!("TRACE `{}` is missing END", trace.trace_id),
        });
    }
    if traces.is_empty() {
        return Err(TraceError::EmptyFile);
    }
    Ok(traces)
}

fn parse_step(rest: &str) -> Result<TraceStep, String> {
    let (head, snippet) = match rest.split_once(" | ") {
        Some((h, s)) => (h, Some(s.trim())),
        None => match rest.strip_suffix(" |") {
            Some(h) => (h, Some("")),
            None => (rest, None),
        },
    };
    let mut fields = head.split_whitespace();
    let (Some(kind), Some(qualified), Some(file_line), None) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err("STEP needs `<kind> <class>.<method> <file>[:<line>]`".into());
    };
    let kind = StepKind::parse(kind).ok_or_else(|| format!("unknown step kind `{kind}`"))?;
    let (class_fqn, method) = split_qualified(qualified);
    if method.is_empty() {
        return Err(format!("missing method name in `{qualified}`"));
    }
    let (file, line) = split_file_line(file_line)?;
    if file.is_empty() {
        return Err("missing file path".into());
    }
    Ok(TraceStep {
        location: CodeLocation::new(file, class_fqn, method, line),
        kind,
        snippet: snippet.filter(|s| !s.is_empty()).map(str::to_string),
    })
}

/// Writes traces in the canonical format. The output parses back to equal
/// values for any trace whose snippets are single-line.
pub fn format_static_traces(traces: &[StaticTrace]) -> String {
    let mut out = String::new();
    for (i, trace) in traces.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "TRACE {}", trace.trace_id);
        for step in &trace.steps {
            let loc = &step.location;
            let _ = write!(
                out,
                "STEP {} {}.{} {}",
                step.kind.as_str(),
                loc.class_fqn,
                loc.method,
                loc.file_line()
            );
            if let Some(snippet) = &step.snippet {
                let _ = write!(out, " | {}", snippet.replace(['\n', '\r'], " "));
            }
            out.push('\n');
        }
        out.push_str("END\n");
    }
    out
}
